//! Statistics-based and min-max quantizers used as fixed-range baselines.
//!
//! Statistics are computed per row (output channel); reshape to a single row
//! for per-tensor behavior. These quantizers have no learnable scale, so their
//! `in_range_mask` is all `true` (plain identity STE).

use super::{round_half_even, sign, QuantOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check_bits(bits: u32) -> Result<()> {
    if (2..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("min-max bits must be in [2, 8], got {bits}")))
    }
}

fn assemble(
    w: &Matrix,
    w_q: Vec<f32>,
    w_hat: Vec<f32>,
    scales: Vec<f32>,
    offsets: Option<Vec<f32>>,
) -> QuantOutput {
    QuantOutput {
        w_q: Matrix::from_raw(w.rows(), w.cols(), w_q),
        w_hat: Matrix::from_raw(w.rows(), w.cols(), w_hat),
        in_range_mask: vec![true; w.len()],
        scales,
        offsets,
    }
}

/// Symmetric min-max: `α = max|w| / (2^(b-1) - 1)`, codes clamped to
/// `±(2^(b-1) - 1)`. An all-zero row keeps α = 1 and quantizes to zeros.
pub fn quantize_minmax_sym(w: &Matrix, bits: u32) -> Result<QuantOutput> {
    check_bits(bits)?;
    let qmax = ((1i32 << (bits - 1)) - 1) as f32;
    let mut w_q = Vec::with_capacity(w.len());
    let mut w_hat = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let max_abs = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let alpha = if max_abs > 0.0 { max_abs / qmax } else { 1.0 };
        for &v in row {
            let code = round_half_even(v / alpha).clamp(-qmax, qmax);
            w_hat.push(code);
            w_q.push(alpha * code);
        }
        scales.push(alpha);
    }
    Ok(assemble(w, w_q, w_hat, scales, None))
}

/// Asymmetric min-max: `α = (max - min) / (2^b - 1)`, `β = min`, codes in
/// `[0, 2^b - 1]`. `w_hat` holds the integer codes. A constant row is
/// returned unchanged with α = 1.
pub fn quantize_minmax_asym(w: &Matrix, bits: u32) -> Result<QuantOutput> {
    check_bits(bits)?;
    let qmax = ((1u32 << bits) - 1) as f32;
    let mut w_q = Vec::with_capacity(w.len());
    let mut w_hat = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    let mut offsets = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let lo = row.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        // constant rows (and empty ones, where hi < lo) keep their values
        if hi <= lo {
            w_q.extend_from_slice(row);
            w_hat.extend(std::iter::repeat_n(0.0, row.len()));
            scales.push(1.0);
            offsets.push(if row.is_empty() { 0.0 } else { lo });
            continue;
        }
        let alpha = (hi - lo) / qmax;
        for &v in row {
            let code = round_half_even((v - lo) / alpha).clamp(0.0, qmax);
            w_hat.push(code);
            w_q.push(alpha * code + lo);
        }
        scales.push(alpha);
        offsets.push(lo);
    }
    Ok(assemble(w, w_q, w_hat, scales, Some(offsets)))
}

/// `α·Sign(w)` with `α = mean|w|` per row.
pub fn quantize_stats_binary(w: &Matrix) -> Result<QuantOutput> {
    let mut w_q = Vec::with_capacity(w.len());
    let mut w_hat = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let alpha = (row.iter().map(|v| v.abs() as f64).sum::<f64>() / row.len().max(1) as f64) as f32;
        if alpha <= 0.0 {
            return Err(Error::AllZeroChannel { channel: r });
        }
        for &v in row {
            let s = sign(v);
            w_hat.push(s);
            w_q.push(alpha * s);
        }
        scales.push(alpha);
    }
    Ok(assemble(w, w_q, w_hat, scales, None))
}

/// Threshold ternary: `Δ = 0.7·mean|w|`, keep `|w| > Δ`, scale by the mean
/// magnitude of the kept weights. A row with nothing kept quantizes to zeros
/// with α = 1.
pub fn quantize_stats_ternary(w: &Matrix) -> Result<QuantOutput> {
    let mut w_q = Vec::with_capacity(w.len());
    let mut w_hat = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let mean_abs = row.iter().map(|v| v.abs() as f64).sum::<f64>() / row.len().max(1) as f64;
        let delta = (0.7 * mean_abs) as f32;
        let (kept_sum, kept) = row
            .iter()
            .filter(|v| v.abs() > delta)
            .fold((0.0f64, 0usize), |(s, n), v| (s + v.abs() as f64, n + 1));
        let alpha = if kept == 0 { 1.0 } else { (kept_sum / kept as f64) as f32 };
        for &v in row {
            let t = if kept > 0 && v.abs() > delta { sign(v) } else { 0.0 };
            w_hat.push(t);
            w_q.push(alpha * t);
        }
        scales.push(alpha);
    }
    Ok(assemble(w, w_q, w_hat, scales, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Matrix {
        Matrix::row_vector(v).unwrap()
    }

    #[test]
    fn minmax_sym_examples() {
        let q = quantize_minmax_sym(&row(&[7.0, -3.5]), 4).unwrap();
        assert_eq!(q.w_q.data(), &[7.0, -4.0]);
        let q = quantize_minmax_sym(&row(&[0.0, 0.0]), 4).unwrap();
        assert_eq!(q.w_q.data(), &[0.0, 0.0]);
        assert_eq!(q.scales, vec![1.0]);
        let q = quantize_minmax_sym(&row(&[-1.0, 0.5]), 2).unwrap();
        assert_eq!(q.w_q.data(), &[-1.0, 0.0]);
        assert!(quantize_minmax_sym(&row(&[1.0]), 1).is_err());
        assert!(quantize_minmax_sym(&row(&[1.0]), 9).is_err());
    }

    #[test]
    fn minmax_asym_examples() {
        let q = quantize_minmax_asym(&row(&[0.0, 1.5]), 2).unwrap();
        assert_eq!(q.w_q.data(), &[0.0, 1.5]);
        let q = quantize_minmax_asym(&row(&[0.0, 1.5, 1.2]), 2).unwrap();
        assert_eq!(q.w_q.get(0, 2), 1.0);
        assert_eq!(q.w_hat.get(0, 2), 2.0);
        let q = quantize_minmax_asym(&row(&[0.3, 0.3]), 3).unwrap();
        assert_eq!(q.w_q.data(), &[0.3, 0.3]);
        assert_eq!(q.scales, vec![1.0]);
    }

    #[test]
    fn stats_binary_examples() {
        let q = quantize_stats_binary(&row(&[0.5, -1.5, 1.0, -1.0])).unwrap();
        assert_eq!(q.scales, vec![1.0]);
        assert_eq!(q.w_q.data(), &[1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(
            quantize_stats_binary(&row(&[0.0])),
            Err(Error::AllZeroChannel { channel: 0 })
        ));
        let q = quantize_stats_binary(&row(&[2.0, 2.0])).unwrap();
        assert_eq!(q.w_q.data(), &[2.0, 2.0]);
    }

    #[test]
    fn stats_ternary_examples() {
        let q = quantize_stats_ternary(&row(&[1.0, -0.2, 0.6, -1.2])).unwrap();
        let a = (1.0 + 0.6 + 1.2) / 3.0f32;
        assert!((q.scales[0] - a).abs() < 1e-6);
        assert_eq!(q.w_hat.data(), &[1.0, 0.0, 1.0, -1.0]);
        assert!((q.w_q.get(0, 0) - a).abs() < 1e-6);
        assert!((q.w_q.get(0, 3) + a).abs() < 1e-6);

        let q = quantize_stats_ternary(&row(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(q.w_q.data(), &[0.0, 0.0, 0.0]);
        let q = quantize_stats_ternary(&row(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert_eq!(q.w_q.data(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
