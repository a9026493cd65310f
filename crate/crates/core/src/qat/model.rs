use crate::autodiff::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{init_scale, QuantSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One fake-quantizable hidden block: `relu(layer_norm(h · Wᵀ) ⊙ gain)`.
#[derive(Debug, Clone)]
struct Hidden {
    weight: ParamId,
    gain: ParamId,
    alpha: Option<ParamId>,
}

/// MLP with a full-precision input embedding, `n` quantizable hidden blocks
/// and a full-precision output layer.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    hidden: Vec<Hidden>,
    out_w: ParamId,
    out_b: ParamId,
}

fn he_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let dist = Normal::new(0.0f32, (2.0 / cols as f32).sqrt()).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl Model {
    pub fn new(input_dim: usize, width: usize, classes: usize, n_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed_w = params.add("embed.w", he_normal(&mut rng, width, input_dim));
        let embed_b = params.add("embed.b", Matrix::zeros(1, width));
        let hidden = (0..n_hidden)
            .map(|i| Hidden {
                weight: params.add(format!("hidden{i}.w"), he_normal(&mut rng, width, width)),
                gain: params.add(format!("hidden{i}.gain"), Matrix::filled(1, width, 1.0)),
                alpha: None,
            })
            .collect();
        let out_w = params.add("out.w", he_normal(&mut rng, classes, width));
        let out_b = params.add("out.b", Matrix::zeros(1, classes));
        Self {
            params,
            embed_w,
            embed_b,
            hidden,
            out_w,
            out_b,
        }
    }

    /// Weight matrices of the quantizable blocks.
    pub fn quantizable(&self) -> Vec<ParamId> {
        self.hidden.iter().map(|h| h.weight).collect()
    }

    pub fn quantizable_weights(&self) -> Vec<Matrix> {
        self.hidden.iter().map(|h| self.params.get(h.weight).clone()).collect()
    }

    pub fn scales(&self) -> Vec<ParamId> {
        self.hidden.iter().filter_map(|h| h.alpha).collect()
    }

    /// Sets every block's α from its current weights.
    pub fn init_scales(&mut self, spec: &QuantSpec) -> Result<()> {
        for (i, h) in self.hidden.iter_mut().enumerate() {
            let scales = init_scale(self.params.get(h.weight), spec)?;
            let col = Matrix::from_raw(scales.len(), 1, scales.as_slice().to_vec());
            match h.alpha {
                Some(id) => self.params.set(id, col),
                None => h.alpha = Some(self.params.add(format!("hidden{i}.alpha"), col)),
            }
        }
        Ok(())
    }

    /// Parameters updated by the optimizer in the given mode. α is trained
    /// only when quantizing.
    pub fn trainable(&self, quantized: bool) -> Vec<ParamId> {
        let mut ids = vec![self.embed_w, self.embed_b];
        for h in &self.hidden {
            ids.push(h.weight);
            ids.push(h.gain);
            if quantized {
                ids.extend(h.alpha);
            }
        }
        ids.push(self.out_w);
        ids.push(self.out_b);
        ids
    }

    /// Training graph reading the batch from input slot 0 and ending in the
    /// mean cross-entropy. With `spec`, hidden blocks are fake-quantized
    /// (call [`Model::init_scales`] first).
    pub fn graph(&self, spec: Option<&QuantSpec>) -> Result<Graph> {
        let mut g = Graph::new();
        let x = g.input(0);
        let (ew, eb) = (g.param(self.embed_w), g.param(self.embed_b));
        let h = g.matmul_bt(x, ew);
        let h = g.bias_add(h, eb);
        let mut h = g.relu(h);
        for block in &self.hidden {
            let w = g.param(block.weight);
            let z = match (spec, block.alpha) {
                (Some(spec), Some(alpha)) => {
                    let a = g.param(alpha);
                    g.fake_quant_linear(h, w, a, *spec)
                }
                (Some(_), None) => {
                    return Err(Error::InvalidArgument("fake-quant graph requested before init_scales".into()))
                }
                (None, _) => g.matmul_bt(h, w),
            };
            let gain = g.param(block.gain);
            let z = g.layer_norm_lite(z, gain);
            h = g.relu(z);
        }
        let (ow, ob) = (g.param(self.out_w), g.param(self.out_b));
        let z = g.matmul_bt(h, ow);
        let z = g.bias_add(z, ob);
        g.softmax_cross_entropy(z);
        Ok(g)
    }

    /// Mean cross-entropy over `x`/`y`, evaluated in chunks.
    pub fn loss(&self, x: &Matrix, y: &[usize], spec: Option<&QuantSpec>) -> Result<f32> {
        const CHUNK: usize = 512;
        let mut g = self.graph(spec)?;
        let mut total = 0.0f64;
        let mut start = 0;
        while start < y.len() {
            let end = (start + CHUNK).min(y.len());
            let n = end - start;
            let chunk = Matrix::from_raw(n, x.cols(), x.data()[start * x.cols()..end * x.cols()].to_vec());
            total += g.forward(&self.params, &[chunk], &y[start..end])? as f64 * n as f64;
            start = end;
        }
        Ok((total / y.len().max(1) as f64) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::BitWidth;

    #[test]
    fn parameter_budget() {
        let m = Model::new(64, 128, 8, 2, 0);
        // ~45k parameters, of which the two hidden matrices are quantizable
        assert_eq!(m.params.count_scalars(), 64 * 128 + 128 + 2 * (128 * 128 + 128) + 8 * 128 + 8);
        assert_eq!(m.quantizable().len(), 2);
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let m = Model::new(16, 32, 4, 2, 3);
        let x = Matrix::from_fn(50, 16, |r, c| ((r + c) % 3 == 0) as u8 as f32);
        let y: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let l = m.loss(&x, &y, None).unwrap();
        assert!(l > 0.5 * 4f32.ln() && l < 3.0 * 4f32.ln(), "{l}");
    }

    #[test]
    fn scales_only_train_in_quantized_mode() {
        let mut m = Model::new(8, 8, 2, 2, 1);
        let spec = QuantSpec::paretoq(BitWidth::Two);
        m.init_scales(&spec).unwrap();
        assert_eq!(m.scales().len(), 2);
        assert!(m.trainable(true).len() == m.trainable(false).len() + 2);
        let x = Matrix::filled(3, 8, 0.5);
        assert!(m.loss(&x, &[0, 1, 0], Some(&spec)).unwrap().is_finite());
        // re-init replaces rather than appends
        m.init_scales(&spec).unwrap();
        assert_eq!(m.scales().len(), 2);
    }
}
