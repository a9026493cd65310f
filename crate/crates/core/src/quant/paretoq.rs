//! The learnable quantizer family and its straight-through backward pass.
//!
//! | bits      | quantizer       | ŵ                                              |
//! |-----------|-----------------|------------------------------------------------|
//! | 1         | elastic binary  | `Sign(w)`                                      |
//! | 1.58, 2   | SEQ             | `(⌊clip(w/α,-1,1)·k/2 - 0.5⌉ + 0.5)·2/k`       |
//! | 3, 4      | LSQ             | `⌊clip(w/α, n, p)⌉`                            |
//!
//! For ternary the balanced grid `{-2/3, 0, 2/3}` is used; the literal
//! four-level evaluation of the SEQ formula with `k = 3` is available through
//! [`QuantSpec::seq_literal_eq5`].

use super::{round_half_even, sign, ChannelScales, GradPair, QuantOutput, QuantSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::spec::{BitWidth, QuantKind};

/// Per-element branch selected by a spec.
#[derive(Debug, Clone, Copy)]
enum Branch {
    Binary,
    /// SEQ with `k` levels; `literal` only matters for `k = 3`.
    Seq { k: u32, literal: bool },
    Lsq { n: i32, p: i32 },
}

impl Branch {
    fn from_spec(spec: &QuantSpec) -> Result<Self> {
        spec.validate_learnable()?;
        Ok(match spec.kind {
            QuantKind::ElasticBinary => Branch::Binary,
            QuantKind::Seq => Branch::Seq {
                k: spec.bitwidth.levels(),
                literal: spec.seq_literal_eq5,
            },
            QuantKind::Lsq => {
                let (n, p) = spec.bitwidth.lsq_bounds();
                Branch::Lsq { n, p }
            }
            _ => unreachable!("validate_learnable admits only learnable kinds"),
        })
    }

    /// Normalized level and STE indicator for `x = w/α` (and `w` for the sign).
    #[inline]
    fn level(self, w: f32, x: f32) -> (f32, bool) {
        match self {
            Branch::Binary => (sign(w), x.abs() < 1.0),
            Branch::Seq { k: 3, literal: false } => {
                let c = x.clamp(-1.0, 1.0);
                let r = round_half_even(c * 1.5).clamp(-1.0, 1.0) as i32;
                (r as f32 / 1.5, x.abs() < 1.0)
            }
            Branch::Seq { k, .. } => {
                let half = k as f32 / 2.0;
                let c = x.clamp(-1.0, 1.0);
                // codes span [-k/2, k/2 - 1] for even k, [-2, 1] for the literal k = 3
                let lo = -(k as i32 / 2) - (k as i32 % 2);
                let hi = (k as i32 + 1) / 2 - 1;
                let r = (round_half_even(c * half - 0.5) as i32).clamp(lo, hi);
                ((r as f32 + 0.5) / k as f32 * 2.0, x.abs() < 1.0)
            }
            Branch::Lsq { n, p } => {
                let c = x.clamp(n as f32, p as f32);
                let r = (round_half_even(c) as i32).clamp(n, p);
                (r as f32, (n as f32) < x && x < p as f32)
            }
        }
    }

    /// `∂W_Q/∂α` for one element under the STE.
    #[inline]
    fn d_alpha(self, w: f32, x: f32, w_hat: f32, in_range: bool) -> f32 {
        match self {
            Branch::Binary => sign(w),
            Branch::Seq { .. } | Branch::Lsq { .. } => {
                if in_range {
                    w_hat - x
                } else {
                    w_hat
                }
            }
        }
    }
}

fn check_alpha(w: &Matrix, alpha: &ChannelScales) -> Result<()> {
    if w.rows() > 0 {
        alpha.check_rows(w.rows())?;
    }
    Ok(())
}

fn run_forward(w: &Matrix, alpha: &ChannelScales, branch: Branch) -> Result<QuantOutput> {
    check_alpha(w, alpha)?;
    let mut w_q = Vec::with_capacity(w.len());
    let mut w_hat = Vec::with_capacity(w.len());
    let mut mask = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let a = alpha.for_row(r);
        for &v in w.row(r) {
            let (level, in_range) = branch.level(v, v / a);
            w_hat.push(level);
            w_q.push(a * level);
            mask.push(in_range);
        }
        scales.push(a);
    }
    Ok(QuantOutput {
        w_q: Matrix::from_raw(w.rows(), w.cols(), w_q),
        w_hat: Matrix::from_raw(w.rows(), w.cols(), w_hat),
        in_range_mask: mask,
        scales,
        offsets: None,
    })
}

/// SEQ forward with `k ∈ {3, 4}` levels. `k = 3` uses the balanced ternary grid.
pub fn seq_forward(w: &Matrix, alpha: &ChannelScales, k: u32) -> Result<QuantOutput> {
    if k != 3 && k != 4 {
        return Err(Error::InvalidSpec(format!("SEQ level count must be 3 or 4, got {k}")));
    }
    run_forward(w, alpha, Branch::Seq { k, literal: false })
}

/// LSQ forward for 3 or 4 bits.
pub fn lsq_forward(w: &Matrix, alpha: &ChannelScales, bitwidth: BitWidth) -> Result<QuantOutput> {
    if !matches!(bitwidth, BitWidth::Three | BitWidth::Four) {
        return Err(Error::InvalidSpec(format!("LSQ supports 3 or 4 bits, got {bitwidth}")));
    }
    let (n, p) = bitwidth.lsq_bounds();
    run_forward(w, alpha, Branch::Lsq { n, p })
}

/// Elastic binarization `α·Sign(w)`.
pub fn binary_forward(w: &Matrix, alpha: &ChannelScales) -> Result<QuantOutput> {
    run_forward(w, alpha, Branch::Binary)
}

/// Dispatches to the branch selected by `spec`.
pub fn paretoq_forward(w: &Matrix, alpha: &ChannelScales, spec: &QuantSpec) -> Result<QuantOutput> {
    run_forward(w, alpha, Branch::from_spec(spec)?)
}

/// Quantize-dequantize: `α·ŵ` only.
pub fn fake_quant(w: &Matrix, alpha: &ChannelScales, spec: &QuantSpec) -> Result<Matrix> {
    check_alpha(w, alpha)?;
    let branch = Branch::from_spec(spec)?;
    let mut w_q = Vec::with_capacity(w.len());
    for r in 0..w.rows() {
        let a = alpha.for_row(r);
        w_q.extend(w.row(r).iter().map(|&v| a * branch.level(v, v / a).0));
    }
    Ok(Matrix::from_raw(w.rows(), w.cols(), w_q))
}

/// Straight-through gradients for weights and scales given the upstream
/// gradient `∂L/∂W_Q`.
///
/// The weight gradient passes through where `w/α` lies strictly inside the
/// clip range. The α gradient is reduced per channel and multiplied by the
/// spec's gradient scale.
pub fn paretoq_backward(
    w: &Matrix,
    alpha: &ChannelScales,
    spec: &QuantSpec,
    upstream: &Matrix,
) -> Result<GradPair> {
    w.ensure_same_shape(upstream)?;
    check_alpha(w, alpha)?;
    let branch = Branch::from_spec(spec)?;
    let g = spec.alpha_grad_multiplier(alpha.elements_per_scale(w.rows(), w.cols()));

    let mut d_w = Vec::with_capacity(w.len());
    let mut d_alpha = vec![0.0f64; alpha.len()];
    for r in 0..w.rows() {
        let a = alpha.for_row(r);
        let slot = if alpha.len() == 1 { 0 } else { r };
        let mut acc = 0.0f64;
        for (&v, &up) in w.row(r).iter().zip(upstream.row(r)) {
            let x = v / a;
            let (level, in_range) = branch.level(v, x);
            d_w.push(if in_range { up } else { 0.0 });
            acc += up as f64 * branch.d_alpha(v, x, level, in_range) as f64;
        }
        d_alpha[slot] += acc;
    }
    Ok(GradPair {
        d_w: Matrix::from_raw(w.rows(), w.cols(), d_w),
        d_alpha: d_alpha.into_iter().map(|d| (d * g as f64) as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::AlphaGradScale;

    fn scalar(w: f32) -> Matrix {
        Matrix::row_vector(&[w]).unwrap()
    }

    fn a(v: f32) -> ChannelScales {
        ChannelScales::new(vec![v]).unwrap()
    }

    fn unit(b: BitWidth) -> QuantSpec {
        QuantSpec::paretoq(b).with_grad_scale(AlphaGradScale::Unit)
    }

    #[test]
    fn seq_two_bit_examples() {
        let f = |w| seq_forward(&scalar(w), &a(1.0), 4).unwrap().w_q.get(0, 0);
        assert_eq!(f(0.6), 0.75);
        assert_eq!(f(-2.0), -0.75);
        assert_eq!(f(0.0), 0.25);
        // upper clip: 1·2 - 0.5 = 1.5 rounds to 2 and is clamped back to 1
        assert_eq!(f(1.0), 0.75);
        assert_eq!(f(5.0), 0.75);
    }

    #[test]
    fn seq_ternary_examples() {
        let f = |w| seq_forward(&scalar(w), &a(1.0), 3).unwrap().w_q.get(0, 0);
        assert_eq!(f(0.5), 2.0 / 3.0);
        assert_eq!(f(0.2), 0.0);
        assert_eq!(f(-9.0), -2.0 / 3.0);
        assert!(seq_forward(&scalar(0.1), &a(1.0), 5).is_err());
    }

    #[test]
    fn seq_literal_ternary_has_four_levels() {
        let mut spec = QuantSpec::paretoq(BitWidth::Ternary);
        spec.seq_literal_eq5 = true;
        let w = Matrix::row_vector(&[-1.0, -0.2, 0.2, 1.0, 0.0]).unwrap();
        let q = paretoq_forward(&w, &a(1.0), &spec).unwrap();
        let third = 1.0f32 / 3.0 * 2.0 / 2.0;
        assert_eq!(q.w_hat.get(0, 0), -1.0);
        assert!((q.w_hat.get(0, 1) + third).abs() < 1e-6);
        assert!((q.w_hat.get(0, 2) - third).abs() < 1e-6);
        assert_eq!(q.w_hat.get(0, 3), 1.0);
        let levels = spec.level_set();
        assert!(q.w_hat.data().iter().all(|v| levels.contains(v)));
    }

    #[test]
    fn lsq_examples() {
        let f = |w, al, b| lsq_forward(&scalar(w), &a(al), b).unwrap().w_q.get(0, 0);
        assert_eq!(f(3.6, 1.0, BitWidth::Four), 4.0);
        assert_eq!(f(-9.3, 1.0, BitWidth::Four), -8.0);
        assert_eq!(f(0.4, 0.5, BitWidth::Three), 0.5);
        assert!(lsq_forward(&scalar(1.0), &a(1.0), BitWidth::Two).is_err());
    }

    #[test]
    fn binary_examples() {
        let f = |w, al| binary_forward(&scalar(w), &a(al)).unwrap().w_q.get(0, 0);
        assert_eq!(f(0.3, 0.7), 0.7);
        assert_eq!(f(-1.2, 0.7), -0.7);
        assert_eq!(f(0.0, 1.0), 1.0);
    }

    #[test]
    fn dispatch_matches_branches() {
        let w = Matrix::from_rows(&[&[0.3, -1.7, 0.0, 2.2], &[-0.1, 0.05, 0.9, -0.4]]).unwrap();
        let al = ChannelScales::new(vec![0.8, 0.3]).unwrap();
        assert_eq!(
            paretoq_forward(&w, &al, &QuantSpec::paretoq(BitWidth::One)).unwrap(),
            binary_forward(&w, &al).unwrap()
        );
        assert_eq!(
            paretoq_forward(&w, &al, &QuantSpec::paretoq(BitWidth::Two)).unwrap(),
            seq_forward(&w, &al, 4).unwrap()
        );
        assert_eq!(
            paretoq_forward(&w, &al, &QuantSpec::paretoq(BitWidth::Three)).unwrap(),
            lsq_forward(&w, &al, BitWidth::Three).unwrap()
        );
        assert_eq!(
            paretoq_forward(&scalar(0.6), &a(1.0), &QuantSpec::paretoq(BitWidth::Two))
                .unwrap()
                .w_q
                .get(0, 0),
            0.75
        );
        assert_eq!(fake_quant(&scalar(3.6), &a(1.0), &QuantSpec::paretoq(BitWidth::Four)).unwrap().get(0, 0), 4.0);
        assert_eq!(fake_quant(&scalar(-2.0), &a(1.0), &QuantSpec::paretoq(BitWidth::Two)).unwrap().get(0, 0), -0.75);
    }

    #[test]
    fn inconsistent_spec_rejected() {
        let spec = QuantSpec {
            kind: QuantKind::Lsq,
            ..QuantSpec::paretoq(BitWidth::Two)
        };
        assert!(paretoq_forward(&scalar(1.0), &a(1.0), &spec).is_err());
        let spec = QuantSpec {
            kind: QuantKind::StatsBinary,
            ..QuantSpec::paretoq(BitWidth::One)
        };
        assert!(paretoq_forward(&scalar(1.0), &a(1.0), &spec).is_err());
        let bad_alpha = ChannelScales::new(vec![1.0, 1.0, 1.0]).unwrap();
        let w = Matrix::zeros(2, 2);
        assert!(paretoq_forward(&w, &bad_alpha, &QuantSpec::paretoq(BitWidth::Two)).is_err());
    }

    #[test]
    fn backward_examples() {
        let one = scalar(1.0);
        let g = |b, w: f32| paretoq_backward(&scalar(w), &a(1.0), &unit(b), &one).unwrap();

        let r = g(BitWidth::Two, 0.6);
        assert_eq!(r.d_w.get(0, 0), 1.0);
        assert!((r.d_alpha[0] - 0.15).abs() < 1e-6);

        let r = g(BitWidth::Two, 2.0);
        assert_eq!(r.d_w.get(0, 0), 0.0);
        assert_eq!(r.d_alpha[0], 0.75);

        let r = g(BitWidth::One, -0.5);
        assert_eq!(r.d_w.get(0, 0), 1.0);
        assert_eq!(r.d_alpha[0], -1.0);

        let r = g(BitWidth::Four, 3.6);
        assert_eq!(r.d_w.get(0, 0), 1.0);
        assert!((r.d_alpha[0] - 0.4).abs() < 1e-6);

        let r = g(BitWidth::Four, 9.0);
        assert_eq!(r.d_w.get(0, 0), 0.0);
        assert_eq!(r.d_alpha[0], 7.0);
    }

    #[test]
    fn backward_boundaries_are_excluded() {
        let one = scalar(1.0);
        // |w/α| == 1 gets no weight gradient for the SEQ and binary branches
        for b in [BitWidth::One, BitWidth::Ternary, BitWidth::Two] {
            let r = paretoq_backward(&scalar(-1.0), &a(1.0), &unit(b), &one).unwrap();
            assert_eq!(r.d_w.get(0, 0), 0.0);
        }
        // w/α == p and w/α == n for LSQ
        let r = paretoq_backward(&scalar(7.0), &a(1.0), &unit(BitWidth::Four), &one).unwrap();
        assert_eq!(r.d_w.get(0, 0), 0.0);
        let r = paretoq_backward(&scalar(-8.0), &a(1.0), &unit(BitWidth::Four), &one).unwrap();
        assert_eq!(r.d_w.get(0, 0), 0.0);
    }

    #[test]
    fn backward_reduces_per_channel_with_grad_scale() {
        let w = Matrix::from_rows(&[&[0.6, 2.0], &[-0.5, 0.1]]).unwrap();
        let up = Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 0.0]]).unwrap();
        let al = ChannelScales::new(vec![1.0, 1.0]).unwrap();
        let spec = QuantSpec::paretoq(BitWidth::Two);
        let r = paretoq_backward(&w, &al, &spec, &up).unwrap();
        // row 0: 1·0.15 + 2·0.75 = 1.65; row 1: 1·(-0.75 - (-0.5)) = -0.25; g = 1/sqrt(2)
        let g = 1.0 / 2f32.sqrt();
        assert!((r.d_alpha[0] - 1.65 * g).abs() < 1e-6);
        assert!((r.d_alpha[1] + 0.25 * g).abs() < 1e-6);
        assert_eq!(r.d_w.data(), &[1.0, 0.0, 1.0, 0.0]);

        let spec = spec.with_granularity(crate::quant::Granularity::PerTensor);
        let r = paretoq_backward(&w, &a(1.0), &spec, &up).unwrap();
        assert_eq!(r.d_alpha.len(), 1);
        assert!((r.d_alpha[0] - (1.65 - 0.25) * 0.5).abs() < 1e-6);
    }

    #[test]
    fn backward_shape_mismatch() {
        let r = paretoq_backward(
            &Matrix::zeros(2, 2),
            &a(1.0),
            &QuantSpec::paretoq(BitWidth::Two),
            &Matrix::zeros(2, 3),
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
