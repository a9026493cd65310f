//! Weight quantizers: the learnable elastic-binary / SEQ / LSQ family with
//! straight-through gradients, scale initialization, and the statistics-based
//! and min-max baselines.
//!
//! Numeric conventions shared by every quantizer here (and normative for the
//! packed format):
//! - rounding is round-half-to-even,
//! - rounded integers are clamped to the branch's code range,
//! - `Sign(0) = +1`,
//! - range indicators use strict inequalities.

mod baseline;
mod paretoq;
mod spec;

pub use baseline::{
    quantize_minmax_asym, quantize_minmax_sym, quantize_stats_binary, quantize_stats_ternary,
};
pub use paretoq::{
    binary_forward, fake_quant, lsq_forward, paretoq_backward, paretoq_forward, seq_forward,
};
pub use spec::{AlphaGradScale, BitWidth, Granularity, QuantKind, QuantSpec};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

/// Learnable scale vector: one α per output channel, or a single α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScales {
    alpha: Vec<f32>,
}

impl ChannelScales {
    pub fn new(alpha: Vec<f32>) -> Result<Self> {
        if let Some((channel, &value)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(Error::NonPositiveScale { channel, value });
        }
        Ok(Self { alpha })
    }

    pub fn uniform(value: f32, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Scale applying to row `r`, broadcasting a per-tensor scale.
    #[inline]
    pub fn for_row(&self, r: usize) -> f32 {
        if self.alpha.len() == 1 {
            self.alpha[0]
        } else {
            self.alpha[r]
        }
    }

    /// Checks that the scales broadcast over `rows` output channels.
    pub fn check_rows(&self, rows: usize) -> Result<()> {
        if self.alpha.len() == rows || (self.alpha.len() == 1 && rows > 0) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{rows} or 1 scales"),
                format!("{} scales", self.alpha.len()),
            ))
        }
    }

    /// Element count sharing each scale for a `rows × cols` matrix.
    pub fn elements_per_scale(&self, rows: usize, cols: usize) -> usize {
        if self.alpha.len() == 1 {
            rows * cols
        } else {
            cols
        }
    }

    /// Clamps every α to at least `floor`, keeping the positivity invariant
    /// after an optimizer update.
    pub fn from_updated(values: &[f32], floor: f32) -> Self {
        Self {
            alpha: values
                .iter()
                .map(|&a| if a.is_finite() { a.max(floor) } else { floor })
                .collect(),
        }
    }
}

/// Forward result of a quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutput {
    /// Dequantized weights `α·ŵ (+ β)`.
    pub w_q: Matrix,
    /// Normalized (scale-free) levels ŵ.
    pub w_hat: Matrix,
    /// Row-major STE pass-through indicator.
    pub in_range_mask: Vec<bool>,
    /// Scales used, one per row.
    pub scales: Vec<f32>,
    /// Per-row offset β; only set by asymmetric min-max.
    pub offsets: Option<Vec<f32>>,
}

/// Straight-through gradients of a quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub d_w: Matrix,
    pub d_alpha: Vec<f32>,
}

/// Round half to even. Below 2^22 in magnitude, adding and removing
/// 1.5·2^23 rounds in the FPU's default ties-to-even mode, which avoids the
/// library call `round_ties_even` lowers to on baseline x86-64. Larger
/// values are already integers.
#[inline]
pub(crate) fn round_half_even(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0;
    if x.abs() < 4_194_304.0 {
        ((x + SHIFT) - SHIFT).copysign(x)
    } else {
        x
    }
}

/// `Sign` with `Sign(0) = +1`.
#[inline]
pub(crate) fn sign(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Initial α for a learnable quantizer: mean |w| for 1 bit (the
/// least-squares optimum for `α·Sign(w)`), max |w| for 1.58/2 bits and
/// max |w| / p for 3/4 bits.
pub fn init_scale(w: &Matrix, spec: &QuantSpec) -> Result<ChannelScales> {
    spec.validate()?;
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::InvalidArgument("cannot initialize scales of an empty matrix".into()));
    }
    let stat = |vals: &mut dyn Iterator<Item = f32>, count: usize| -> f32 {
        match spec.bitwidth {
            BitWidth::One => {
                let s: f64 = vals.map(|v| v.abs() as f64).sum();
                (s / count as f64) as f32
            }
            BitWidth::Ternary | BitWidth::Two => vals.fold(0.0f32, |m, v| m.max(v.abs())),
            BitWidth::Three | BitWidth::Four => {
                vals.fold(0.0f32, |m, v| m.max(v.abs())) / spec.bitwidth.positive_levels()
            }
        }
    };
    let alpha: Vec<f32> = match spec.granularity {
        Granularity::PerChannel => (0..w.rows())
            .map(|r| stat(&mut w.row(r).iter().copied(), w.cols()))
            .collect(),
        Granularity::PerTensor => vec![stat(&mut w.data().iter().copied(), w.len())],
    };
    if let Some(channel) = alpha.iter().position(|&a| a <= 0.0) {
        return Err(Error::AllZeroChannel { channel });
    }
    ChannelScales::new(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Matrix {
        Matrix::row_vector(v).unwrap()
    }

    #[test]
    fn init_scale_examples() {
        let a = init_scale(&row(&[0.5, -1.5, 1.0, -1.0]), &QuantSpec::paretoq(BitWidth::One)).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        let a = init_scale(&row(&[0.2, -0.8, 0.5]), &QuantSpec::paretoq(BitWidth::Two)).unwrap();
        assert_eq!(a.as_slice(), &[0.8]);
        let a = init_scale(&row(&[1.4, -0.7]), &QuantSpec::paretoq(BitWidth::Four)).unwrap();
        assert!((a.as_slice()[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn init_scale_per_channel_and_tensor() {
        let w = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 0.25]]).unwrap();
        let spec = QuantSpec::paretoq(BitWidth::Two);
        assert_eq!(init_scale(&w, &spec).unwrap().as_slice(), &[2.0, 0.5]);
        let spec = spec.with_granularity(Granularity::PerTensor);
        assert_eq!(init_scale(&w, &spec).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn init_scale_rejects_zero_channel() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 0.0]]).unwrap();
        for b in BitWidth::ALL {
            assert!(matches!(
                init_scale(&w, &QuantSpec::paretoq(b)),
                Err(Error::AllZeroChannel { channel: 1 })
            ));
        }
    }

    #[test]
    fn scales_must_be_positive() {
        assert!(ChannelScales::new(vec![1.0, 0.0]).is_err());
        assert!(ChannelScales::new(vec![-1.0]).is_err());
        assert!(ChannelScales::new(vec![f32::NAN]).is_err());
        let s = ChannelScales::from_updated(&[-3.0, 0.5], 1e-6);
        assert_eq!(s.as_slice(), &[1e-6, 0.5]);
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(-2.5), -2.0);
        assert_eq!(round_half_even(1.5), 2.0);
        assert_eq!(round_half_even(-3.5), -4.0);
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
    }

    #[test]
    fn fast_rounding_agrees_with_std() {
        let mut probes: Vec<f32> = vec![0.0, -0.0, 0.5, -0.5, 4_194_303.5, -4_194_303.5, 4_194_304.0, 1e30, f32::MAX];
        probes.extend((-4000..4000).map(|i| i as f32 * 0.25));
        probes.extend((0..10_000).map(|i| (i as f32 * 0.618_034).sin() * 37.0));
        probes.extend((0..64).map(|i| f32::from_bits(0x3f00_0000 + i) - 1.0));
        for x in probes {
            assert_eq!(round_half_even(x).to_bits(), x.round_ties_even().to_bits(), "{x}");
        }
        assert!(round_half_even(f32::NAN).is_nan());
        assert_eq!(round_half_even(f32::INFINITY), f32::INFINITY);
    }
}
