use super::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{fake_quant, paretoq_backward, ChannelScales, QuantSpec};

pub type NodeId = usize;

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone)]
pub enum Op {
    /// Caller-supplied matrix, `inputs[slot]` at forward time.
    Input { slot: usize },
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Add { a: NodeId, b: NodeId },
    /// Adds a `1 × cols` row to every row of `x`.
    BiasAdd { x: NodeId, bias: NodeId },
    Relu(NodeId),
    /// Per-row standardization times a learned `1 × cols` gain.
    LayerNormLite { x: NodeId, gain: NodeId },
    /// Mean cross-entropy of row-wise softmax against the forward targets.
    SoftmaxCrossEntropy { logits: NodeId },
    /// `x · fake_quant(W, α)ᵀ` with `W` stored `out × in` and α as an
    /// `out × 1` (or `1 × 1`) parameter.
    FakeQuantLinear {
        x: NodeId,
        weight: NodeId,
        alpha: NodeId,
        spec: QuantSpec,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "parameter",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::BiasAdd { .. } => "bias-add",
            Op::Relu(_) => "relu",
            Op::LayerNormLite { .. } => "layer-norm-lite",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::FakeQuantLinear { .. } => "fake-quant-linear",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } => vec![a, b],
            Op::BiasAdd { x, bias } => vec![x, bias],
            Op::Relu(x) => vec![x],
            Op::LayerNormLite { x, gain } => vec![x, gain],
            Op::SoftmaxCrossEntropy { logits } => vec![logits],
            Op::FakeQuantLinear { x, weight, alpha, .. } => vec![x, weight, alpha],
        }
    }
}

/// Forward-pass byproducts needed by backward.
#[derive(Debug, Clone)]
enum Cache {
    None,
    LayerNorm { x_hat: Matrix, inv_std: Vec<f32> },
    Softmax { probs: Matrix, targets: Vec<usize> },
    FakeQuant { w_q: Matrix },
}

/// Gradient of the output with respect to every parameter that feeds it.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Option<Matrix>>,
    caches: Vec<Cache>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = self.ops.len();
        debug_assert!(op.operands().iter().all(|&o| o < id));
        self.ops.push(op);
        self.output = Some(id);
        id
    }

    pub fn input(&mut self, slot: usize) -> NodeId {
        self.push(Op::Input { slot })
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul { a, b, transpose_b: false })
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul { a, b, transpose_b: true })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add { a, b })
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::BiasAdd { x, bias })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn layer_norm_lite(&mut self, x: NodeId, gain: NodeId) -> NodeId {
        self.push(Op::LayerNormLite { x, gain })
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits })
    }

    pub fn fake_quant_linear(&mut self, x: NodeId, weight: NodeId, alpha: NodeId, spec: QuantSpec) -> NodeId {
        self.push(Op::FakeQuantLinear { x, weight, alpha, spec })
    }

    /// Marks `node` as the value returned by [`Graph::forward`] and seeded by
    /// [`Graph::backward`]. Defaults to the last node added.
    pub fn set_output(&mut self, node: NodeId) {
        self.output = Some(node);
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Cached forward value of `node`.
    pub fn value(&self, node: NodeId) -> Option<&Matrix> {
        self.values.get(node).and_then(Option::as_ref)
    }

    fn val(&self, node: NodeId) -> &Matrix {
        self.values[node].as_ref().expect("operands evaluate before their users")
    }

    /// Evaluates every node and returns the scalar output.
    pub fn forward(&mut self, params: &ParamStore, inputs: &[Matrix], targets: &[usize]) -> Result<f32> {
        self.evaluate(params, inputs, targets)?;
        let out = self.val(self.output.expect("evaluate checked the output"));
        if out.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "graph output is {}x{}, not a scalar loss",
                out.rows(),
                out.cols()
            )));
        }
        Ok(out.get(0, 0))
    }

    /// Evaluates every node, caching values, without requiring a scalar output.
    pub fn evaluate(&mut self, params: &ParamStore, inputs: &[Matrix], targets: &[usize]) -> Result<()> {
        if self.output.is_none() {
            return Err(Error::InvalidArgument("empty graph".into()));
        }
        self.values = vec![None; self.ops.len()];
        self.caches = vec![Cache::None; self.ops.len()];
        for id in 0..self.ops.len() {
            let (value, cache) = self.eval_node(id, params, inputs, targets)?;
            if !value.is_finite() {
                self.values.clear();
                return Err(Error::NumericalDivergence {
                    node: id,
                    op: self.ops[id].name(),
                });
            }
            self.values[id] = Some(value);
            self.caches[id] = cache;
        }
        Ok(())
    }

    fn eval_node(&self, id: NodeId, params: &ParamStore, inputs: &[Matrix], targets: &[usize]) -> Result<(Matrix, Cache)> {
        let op = &self.ops[id];
        Ok(match *op {
            Op::Input { slot } => (
                inputs
                    .get(slot)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("missing input slot {slot}")))?,
                Cache::None,
            ),
            Op::Param(p) => (params.get(p).clone(), Cache::None),
            Op::MatMul { a, b, transpose_b } => {
                let (a, b) = (self.val(a), self.val(b));
                let v = if transpose_b { a.matmul_bt(b)? } else { a.matmul(b)? };
                (v, Cache::None)
            }
            Op::Add { a, b } => (self.val(a).add(self.val(b))?, Cache::None),
            Op::BiasAdd { x, bias } => {
                let (x, bias) = (self.val(x), self.val(bias));
                if bias.rows() != 1 || bias.cols() != x.cols() {
                    return Err(Error::shape(
                        format!("1x{} bias", x.cols()),
                        format!("{}x{}", bias.rows(), bias.cols()),
                    ));
                }
                let mut out = x.clone();
                for r in 0..out.rows() {
                    for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                        *o += b;
                    }
                }
                (out, Cache::None)
            }
            Op::Relu(x) => (self.val(x).map(|v| v.max(0.0)), Cache::None),
            Op::LayerNormLite { x, gain } => {
                let (x, gain) = (self.val(x), self.val(gain));
                if gain.shape() != (1, x.cols()) {
                    return Err(Error::shape(
                        format!("1x{} gain", x.cols()),
                        format!("{}x{}", gain.rows(), gain.cols()),
                    ));
                }
                let n = x.cols() as f32;
                let mut x_hat = Matrix::zeros(x.rows(), x.cols());
                let mut inv_std = Vec::with_capacity(x.rows());
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f32>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    for (c, &v) in row.iter().enumerate() {
                        let h = (v - mean) * inv;
                        x_hat.set(r, c, h);
                        out.set(r, c, h * gain.get(0, c));
                    }
                    inv_std.push(inv);
                }
                (out, Cache::LayerNorm { x_hat, inv_std })
            }
            Op::SoftmaxCrossEntropy { logits } => {
                let z = self.val(logits);
                if targets.len() != z.rows() {
                    return Err(Error::shape(
                        format!("{} targets", z.rows()),
                        format!("{}", targets.len()),
                    ));
                }
                let mut probs = Matrix::zeros(z.rows(), z.cols());
                let mut loss = 0.0f64;
                for (r, &t) in targets.iter().enumerate() {
                    if t >= z.cols() {
                        return Err(Error::InvalidArgument(format!("target class {t} out of range")));
                    }
                    let row = z.row(r);
                    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let sum: f32 = row.iter().map(|v| (v - m).exp()).sum();
                    for (c, &v) in row.iter().enumerate() {
                        probs.set(r, c, (v - m).exp() / sum);
                    }
                    loss += (sum.ln() - (row[t] - m)) as f64;
                }
                let mean = (loss / z.rows().max(1) as f64) as f32;
                (
                    Matrix::from_raw(1, 1, vec![mean]),
                    Cache::Softmax {
                        probs,
                        targets: targets.to_vec(),
                    },
                )
            }
            Op::FakeQuantLinear { x, weight, alpha, spec } => {
                let (x, w) = (self.val(x), self.val(weight));
                let scales = alpha_scales(self.val(alpha))?;
                let w_q = fake_quant(w, &scales, &spec)?;
                (x.matmul_bt(&w_q)?, Cache::FakeQuant { w_q })
            }
        })
    }

    /// Reverse pass from the output node (seeded with ones).
    pub fn backward(&self) -> Result<Gradients> {
        let output = self.output.ok_or(Error::BackwardBeforeForward)?;
        if self.values.len() != self.ops.len() || self.values.iter().any(Option::is_none) {
            return Err(Error::BackwardBeforeForward);
        }
        let mut node_grads: Vec<Option<Matrix>> = vec![None; self.ops.len()];
        let out_val = self.val(output);
        node_grads[output] = Some(Matrix::filled(out_val.rows(), out_val.cols(), 1.0));

        let n_params = self
            .ops
            .iter()
            .filter_map(|op| match op {
                Op::Param(p) => Some(p + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut grads = Gradients {
            grads: vec![None; n_params],
        };

        for id in (0..=output).rev() {
            let Some(g) = node_grads[id].take() else { continue };
            match self.ops[id] {
                Op::Input { .. } => {}
                Op::Param(p) => accumulate(&mut grads.grads[p], g)?,
                Op::MatMul { a, b, transpose_b } => {
                    let (av, bv) = (self.val(a), self.val(b));
                    if transpose_b {
                        // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                        accumulate(&mut node_grads[a], g.matmul(bv)?)?;
                        accumulate(&mut node_grads[b], g.matmul_at(av)?)?;
                    } else {
                        // C = A B: dA = dC Bᵀ, dB = Aᵀ dC
                        accumulate(&mut node_grads[a], g.matmul_bt(bv)?)?;
                        accumulate(&mut node_grads[b], av.matmul_at(&g)?)?;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut node_grads[a], g.clone())?;
                    accumulate(&mut node_grads[b], g)?;
                }
                Op::BiasAdd { x, bias } => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut node_grads[x], g)?;
                    accumulate(&mut node_grads[bias], db)?;
                }
                Op::Relu(x) => {
                    let xv = self.val(x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut node_grads[x], dx)?;
                }
                Op::LayerNormLite { x, gain } => {
                    let Cache::LayerNorm { x_hat, inv_std } = &self.caches[id] else {
                        return Err(Error::BackwardBeforeForward);
                    };
                    let gv = self.val(gain);
                    let n = g.cols() as f32;
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    let mut dgain = Matrix::zeros(1, g.cols());
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let (dy, h) = (g.row(r), x_hat.row(r));
                        let mut sum_d = 0.0f32;
                        let mut sum_dh = 0.0f32;
                        for c in 0..dy.len() {
                            let d = dy[c] * gv.get(0, c);
                            sum_d += d;
                            sum_dh += d * h[c];
                            dgain.data_mut()[c] += dy[c] * h[c];
                        }
                        for c in 0..dy.len() {
                            let d = dy[c] * gv.get(0, c);
                            dx.set(r, c, inv / n * (n * d - sum_d - h[c] * sum_dh));
                        }
                    }
                    accumulate(&mut node_grads[x], dx)?;
                    accumulate(&mut node_grads[gain], dgain)?;
                }
                Op::SoftmaxCrossEntropy { logits } => {
                    let Cache::Softmax { probs, targets } = &self.caches[id] else {
                        return Err(Error::BackwardBeforeForward);
                    };
                    let scale = g.get(0, 0) / probs.rows().max(1) as f32;
                    let mut dz = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let v = dz.get(r, t);
                        dz.set(r, t, v - 1.0);
                    }
                    accumulate(&mut node_grads[logits], dz.scale(scale))?;
                }
                Op::FakeQuantLinear { x, weight, alpha, spec } => {
                    let Cache::FakeQuant { w_q } = &self.caches[id] else {
                        return Err(Error::BackwardBeforeForward);
                    };
                    let (xv, wv, av) = (self.val(x), self.val(weight), self.val(alpha));
                    // y = x W_qᵀ: dx = dy W_q, dW_q = dyᵀ x
                    accumulate(&mut node_grads[x], g.matmul(w_q)?)?;
                    let d_wq = g.matmul_at(xv)?;
                    let scales = alpha_scales(av)?;
                    let pair = paretoq_backward(wv, &scales, &spec, &d_wq)?;
                    accumulate(&mut node_grads[weight], pair.d_w)?;
                    accumulate(
                        &mut node_grads[alpha],
                        Matrix::from_raw(av.rows(), av.cols(), pair.d_alpha),
                    )?;
                }
            }
        }
        Ok(grads)
    }
}

fn alpha_scales(m: &Matrix) -> Result<ChannelScales> {
    if m.cols() != 1 {
        return Err(Error::shape("n x 1 scale column", format!("{}x{}", m.rows(), m.cols())));
    }
    ChannelScales::new(m.data().to_vec())
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
