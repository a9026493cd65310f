//! Dequantize-on-the-fly GEMV/GEMM over [`PackedMatrix`].
//!
//! Byte-aligned formats (Pack1, Pack2, PackTernaryAs2Bit, PackTrit243, Pack4)
//! use activation lookup tables: for every group of inputs that share one
//! payload byte, the partial dot product `Σ level(code_j)·x_j` is tabulated
//! for all byte values, so each payload byte costs one lookup and one add.
//! Pack3 codes straddle bytes and are decoded code by code.
//!
//! Each output row is reduced sequentially in a fixed order and scaled by its
//! α once at the end, so results are bitwise identical for any thread count.

mod bench;

pub use bench::{run_bench, BenchReport};

use crate::bitpack::{PackFormat, PackedMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rayon::prelude::*;

const MIN_ROWS_PER_TASK: usize = 32;

/// Per-call activation tables for the byte-aligned formats.
struct ActivationLut {
    /// Codes per payload byte.
    per_byte: usize,
    /// `groups × 256` partial sums.
    table: Vec<f32>,
}

impl ActivationLut {
    fn build(format: PackFormat, x: &[f32]) -> Option<Self> {
        let levels = format.level_table();
        let (per_byte, radix) = match format {
            PackFormat::Pack1 => (8, 2usize),
            PackFormat::Pack2 | PackFormat::PackTernaryAs2Bit => (4, 4),
            PackFormat::Pack4 => (2, 16),
            PackFormat::PackTrit243 => (5, 3),
            PackFormat::Pack3 => return None,
        };
        let groups = x.len().div_ceil(per_byte);
        let mut table = vec![0.0f32; groups * 256];
        let mut scratch = vec![0.0f32; 256];
        for g in 0..groups {
            let out = &mut table[g * 256..(g + 1) * 256];
            // Slot j of a byte value has digit weight radix^j, so after j slots
            // the filled prefix is exactly the first radix^j entries. Extending
            // one slot at a time keeps the summation order left to right.
            out[0] = 0.0;
            let mut filled = 1usize;
            for j in 0..per_byte {
                let xj = x.get(g * per_byte + j).copied().unwrap_or(0.0);
                scratch[..filled].copy_from_slice(&out[..filled]);
                for c in 0..radix {
                    let lv = if c < levels.len() { levels[c] * xj } else { 0.0 };
                    let base = c * filled;
                    for (prev, &partial) in scratch[..filled].iter().enumerate() {
                        out[base + prev] = if j == 0 { lv } else { partial + lv };
                    }
                }
                filled *= radix;
            }
        }
        Some(Self { per_byte, table })
    }

    #[inline]
    fn row_dot(&self, bytes: &[u8]) -> f32 {
        let mut acc = 0.0f32;
        for (g, &b) in bytes.iter().enumerate() {
            acc += self.table[g * 256 + b as usize];
        }
        acc
    }
}

fn row_dot_generic(p: &PackedMatrix, levels: &[f32], r: usize, x: &[f32], codes: &mut [u8]) -> f32 {
    p.unpack_row(r, codes);
    let mut acc = 0.0f32;
    for (&c, &xv) in codes.iter().zip(x) {
        acc += levels[c as usize] * xv;
    }
    acc
}

fn gemv_into(p: &PackedMatrix, x: &[f32], y: &mut [f32]) {
    let cols = p.cols();
    match ActivationLut::build(p.format(), x) {
        Some(lut) => {
            debug_assert_eq!(p.row_bytes(), cols.div_ceil(lut.per_byte));
            y.par_iter_mut()
                .with_min_len(MIN_ROWS_PER_TASK)
                .enumerate()
                .for_each(|(r, out)| {
                    *out = p.scales().for_row(r) * lut.row_dot(p.row_payload(r));
                });
        }
        None => {
            let levels = p.level_table();
            y.par_chunks_mut(MIN_ROWS_PER_TASK)
                .enumerate()
                .for_each(|(chunk, ys)| {
                    let mut codes = vec![0u8; cols];
                    for (i, out) in ys.iter_mut().enumerate() {
                        let r = chunk * MIN_ROWS_PER_TASK + i;
                        *out = p.scales().for_row(r) * row_dot_generic(p, &levels, r, x, &mut codes);
                    }
                });
        }
    }
}

/// `y = dequant(p) · x`.
pub fn gemv_packed(p: &PackedMatrix, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != p.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("input length {}", p.cols()),
            actual: format!("{}", x.len()),
        });
    }
    let mut y = vec![0.0f32; p.rows()];
    gemv_into(p, x, &mut y);
    Ok(y)
}

/// `Y = dequant(p) · X`, column by column.
pub fn gemm_packed(p: &PackedMatrix, x: &Matrix) -> Result<Matrix> {
    if x.rows() != p.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input rows", p.cols()),
            actual: format!("{}", x.rows()),
        });
    }
    let mut out = Matrix::zeros(p.rows(), x.cols());
    let mut y = vec![0.0f32; p.rows()];
    for j in 0..x.cols() {
        gemv_into(p, &x.column(j), &mut y);
        for (r, &v) in y.iter().enumerate() {
            out.set(r, j, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitpack::{decode, encode_levels};
    use crate::quant::ChannelScales;

    #[test]
    fn pack2_gemv_example() {
        let w_hat = Matrix::row_vector(&[0.75, 0.25]).unwrap();
        let p = encode_levels(&w_hat, &ChannelScales::new(vec![4.0]).unwrap(), PackFormat::Pack2).unwrap();
        assert_eq!(gemv_packed(&p, &[2.0, 1.0]).unwrap(), vec![7.0]);
        assert_eq!(gemv_packed(&p, &[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn one_by_one() {
        let w_hat = Matrix::row_vector(&[0.75]).unwrap();
        let p = encode_levels(&w_hat, &ChannelScales::new(vec![4.0 / 3.0]).unwrap(), PackFormat::Pack2).unwrap();
        assert_eq!(gemv_packed(&p, &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = encode_levels(&Matrix::filled(2, 3, 1.0), &ChannelScales::new(vec![1.0]).unwrap(), PackFormat::Pack4)
            .unwrap();
        assert!(gemv_packed(&p, &[1.0, 2.0]).is_err());
        assert!(gemm_packed(&p, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn identity_gemm_recovers_weights() {
        let levels = PackFormat::Pack4.level_table();
        let w_hat = Matrix::from_fn(5, 7, |r, c| levels[(r * 7 + c) % 16]);
        let s = ChannelScales::new(vec![0.5, 1.0, 2.0, 0.25, 4.0]).unwrap();
        let p = encode_levels(&w_hat, &s, PackFormat::Pack4).unwrap();
        assert_eq!(gemm_packed(&p, &Matrix::identity(7)).unwrap(), decode(&p).unwrap());
    }

    #[test]
    fn every_format_matches_dense_on_small_integers() {
        for format in PackFormat::ALL {
            let levels = format.level_table();
            let (rows, cols) = (6, 13);
            let w_hat = Matrix::from_fn(rows, cols, |r, c| levels[(r * 5 + c * 3) % levels.len()]);
            let s = ChannelScales::new(vec![2.0; rows]).unwrap();
            let p = encode_levels(&w_hat, &s, format).unwrap();
            let x: Vec<f32> = (0..cols).map(|c| (c as f32) - 6.0).collect();
            let dense = decode(&p).unwrap();
            let y = gemv_packed(&p, &x).unwrap();
            for r in 0..rows {
                let expect: f32 = dense.row(r).iter().zip(&x).map(|(a, b)| a * b).sum();
                assert!(
                    (y[r] - expect).abs() <= 1e-5 * expect.abs().max(1.0),
                    "{format}: row {r}: {} vs {expect}",
                    y[r]
                );
            }
        }
    }
}
