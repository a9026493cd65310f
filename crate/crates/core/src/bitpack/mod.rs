//! Bit-exact packed storage for quantized weights.
//!
//! Codes are packed little-endian inside each byte: code `j` of a byte with
//! `b`-bit slots occupies bits `[j·b, (j+1)·b)`, and wider codes (Pack3)
//! simply continue into the next byte, so eight 3-bit codes fill three bytes.
//! `PackTrit243` stores five trits per byte as `t0 + 3t1 + 9t2 + 27t3 + 81t4`.
//! Every row starts on a fresh byte; padding bits and padding trits are zero.

mod file;
mod format;

pub use file::{read_packed, write_packed, MAGIC, VERSION};
pub use format::{storage_size, PackFormat};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{ChannelScales, QuantOutput};

/// Packed weight codes plus their per-channel scales. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedMatrix {
    format: PackFormat,
    rows: usize,
    cols: usize,
    payload: Vec<u8>,
    scales: ChannelScales,
}

impl PackedMatrix {
    /// Assembles a packed matrix from raw parts, validating payload size,
    /// scale count and every stored code.
    pub fn from_parts(
        format: PackFormat,
        rows: usize,
        cols: usize,
        payload: Vec<u8>,
        scales: ChannelScales,
    ) -> Result<Self> {
        let needed = storage_size(format, rows, cols);
        if payload.len() < needed {
            return Err(Error::Truncated {
                needed,
                available: payload.len(),
            });
        }
        if payload.len() > needed {
            return Err(Error::CorruptPayload(format!(
                "payload has {} bytes, expected {needed}",
                payload.len()
            )));
        }
        if rows > 0 {
            scales.check_rows(rows)?;
        }
        let p = Self {
            format,
            rows,
            cols,
            payload,
            scales,
        };
        p.validate_codes()?;
        Ok(p)
    }

    fn validate_codes(&self) -> Result<()> {
        match self.format {
            PackFormat::PackTrit243 => {
                if let Some(pos) = self.payload.iter().position(|&b| b >= 243) {
                    return Err(Error::CorruptPayload(format!(
                        "trit byte {} at offset {pos} exceeds 242",
                        self.payload[pos]
                    )));
                }
            }
            PackFormat::PackTernaryAs2Bit => {
                let mut codes = vec![0u8; self.cols];
                for r in 0..self.rows {
                    self.unpack_row(r, &mut codes);
                    if let Some(c) = codes.iter().position(|&c| c == 3) {
                        return Err(Error::CorruptPayload(format!(
                            "unused ternary code 3 at row {r}, column {c}"
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn format(&self) -> PackFormat {
        self.format
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn scales(&self) -> &ChannelScales {
        &self.scales
    }

    pub fn level_table(&self) -> Vec<f32> {
        self.format.level_table()
    }

    pub fn row_bytes(&self) -> usize {
        self.format.row_bytes(self.cols)
    }

    pub fn row_payload(&self, r: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.payload[r * rb..(r + 1) * rb]
    }

    /// Unpacks the codes of row `r` into `out` (length `cols`).
    pub fn unpack_row(&self, r: usize, out: &mut [u8]) {
        debug_assert_eq!(out.len(), self.cols);
        let bytes = self.row_payload(r);
        match self.format.code_bits() {
            Some(bits) => unpack_bits(bytes, bits, out),
            None => unpack_trits(bytes, out),
        }
    }

    /// All codes, row-major.
    pub fn codes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.rows * self.cols];
        if self.cols > 0 {
            for (r, chunk) in out.chunks_mut(self.cols).enumerate() {
                self.unpack_row(r, chunk);
            }
        }
        out
    }

    /// Histogram of stored codes, indexed like [`PackedMatrix::level_table`].
    pub fn code_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.level_table().len()];
        for c in self.codes() {
            hist[c as usize] += 1;
        }
        hist
    }
}

fn pack_bits(codes: &[u8], bits: u32, out: &mut Vec<u8>) {
    let mut acc: u32 = 0;
    let mut acc_bits = 0u32;
    for &code in codes {
        acc |= (code as u32) << acc_bits;
        acc_bits += bits;
        while acc_bits >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            acc_bits -= 8;
        }
    }
    if acc_bits > 0 {
        out.push(acc as u8);
    }
}

fn unpack_bits(bytes: &[u8], bits: u32, out: &mut [u8]) {
    let mask = (1u32 << bits) - 1;
    let mut acc: u32 = 0;
    let mut acc_bits = 0u32;
    let mut next = 0usize;
    for slot in out.iter_mut() {
        while acc_bits < bits {
            acc |= (bytes[next] as u32) << acc_bits;
            next += 1;
            acc_bits += 8;
        }
        *slot = (acc & mask) as u8;
        acc >>= bits;
        acc_bits -= bits;
    }
}

fn pack_trits(codes: &[u8], out: &mut Vec<u8>) {
    for group in codes.chunks(5) {
        let byte = group.iter().rev().fold(0u8, |acc, &t| acc * 3 + t);
        out.push(byte);
    }
}

fn unpack_trits(bytes: &[u8], out: &mut [u8]) {
    for (group, &byte) in out.chunks_mut(5).zip(bytes) {
        let mut b = byte;
        for slot in group.iter_mut() {
            *slot = b % 3;
            b /= 3;
        }
    }
}

/// Packs the normalized levels of `q` in `format`. Every ŵ must appear in the
/// format's level table exactly.
pub fn encode(q: &QuantOutput, scales: &ChannelScales, format: PackFormat) -> Result<PackedMatrix> {
    encode_levels(&q.w_hat, scales, format)
}

/// As [`encode`], from a matrix of normalized levels.
pub fn encode_levels(w_hat: &Matrix, scales: &ChannelScales, format: PackFormat) -> Result<PackedMatrix> {
    let table = format.level_table();
    let (rows, cols) = w_hat.shape();
    let mut payload = Vec::with_capacity(storage_size(format, rows, cols));
    let mut codes = vec![0u8; cols];
    for r in 0..rows {
        for (c, (&level, slot)) in w_hat.row(r).iter().zip(codes.iter_mut()).enumerate() {
            *slot = table
                .iter()
                .position(|&t| t == level)
                .ok_or(Error::UnencodableLevel {
                    format: format.name(),
                    index: r * cols + c,
                    level,
                })? as u8;
        }
        match format.code_bits() {
            Some(bits) => pack_bits(&codes, bits, &mut payload),
            None => pack_trits(&codes, &mut payload),
        }
    }
    PackedMatrix::from_parts(format, rows, cols, payload, scales.clone())
}

/// Normalized levels ŵ of a packed matrix.
pub fn decode_levels(p: &PackedMatrix) -> Result<Matrix> {
    p.validate_codes()?;
    let table = p.level_table();
    let data = p.codes().into_iter().map(|c| table[c as usize]).collect();
    Ok(Matrix::from_raw(p.rows, p.cols, data))
}

/// Dequantized weights `α·ŵ`.
pub fn decode(p: &PackedMatrix) -> Result<Matrix> {
    let mut m = decode_levels(p)?;
    for r in 0..p.rows {
        let a = p.scales.for_row(r);
        for v in m.row_mut(r) {
            *v *= a;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> ChannelScales {
        ChannelScales::new(vec![1.0]).unwrap()
    }

    #[test]
    fn pack2_byte_example() {
        let table = PackFormat::Pack2.level_table();
        let w_hat = Matrix::row_vector(&[table[3], table[0], table[1], table[2]]).unwrap();
        let p = encode_levels(&w_hat, &one(), PackFormat::Pack2).unwrap();
        assert_eq!(p.payload(), &[0x93]);

        let scaled = PackedMatrix::from_parts(
            PackFormat::Pack2,
            1,
            4,
            vec![0x93],
            ChannelScales::new(vec![2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(decode(&scaled).unwrap().data(), &[1.5, -1.5, -0.5, 0.5]);
    }

    #[test]
    fn trit_byte_example() {
        let t = 1.0 / 1.5;
        let w_hat = Matrix::row_vector(&[t, 0.0, -t, 0.0, t]).unwrap();
        let p = encode_levels(&w_hat, &one(), PackFormat::PackTrit243).unwrap();
        assert_eq!(p.payload(), &[194]);
        assert_eq!(decode_levels(&p).unwrap(), w_hat);
    }

    #[test]
    fn pack1_byte_example() {
        let w_hat = Matrix::row_vector(&[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0]).unwrap();
        let p = encode_levels(&w_hat, &one(), PackFormat::Pack1).unwrap();
        assert_eq!(p.payload(), &[0xD3]);
    }

    #[test]
    fn pack3_three_bytes_per_eight() {
        let w_hat = Matrix::row_vector(&[-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = encode_levels(&w_hat, &one(), PackFormat::Pack3).unwrap();
        assert_eq!(p.payload().len(), 3);
        // codes 0..8 packed LSB-first: 0b10_001_000, 0b1_100_011_0, 0b111_110_10
        assert_eq!(p.payload(), &[0b1000_1000, 0b1100_0110, 0b1111_1010]);
        assert_eq!(decode_levels(&p).unwrap(), w_hat);
    }

    #[test]
    fn empty_matrix() {
        let p = encode_levels(&Matrix::zeros(0, 0), &ChannelScales::new(vec![]).unwrap(), PackFormat::Pack2)
            .unwrap();
        assert!(p.payload().is_empty());
        assert!(decode(&p).unwrap().is_empty());
    }

    #[test]
    fn corrupt_trit_byte() {
        let r = PackedMatrix::from_parts(PackFormat::PackTrit243, 1, 5, vec![243], one());
        assert!(matches!(r, Err(Error::CorruptPayload(_))));
        let r = PackedMatrix::from_parts(PackFormat::PackTernaryAs2Bit, 1, 1, vec![3], one());
        assert!(matches!(r, Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn truncated_payload() {
        let r = PackedMatrix::from_parts(PackFormat::Pack4, 2, 3, vec![0; 3], one());
        assert!(matches!(r, Err(Error::Truncated { needed: 4, available: 3 })));
    }

    #[test]
    fn unencodable_level() {
        let w_hat = Matrix::row_vector(&[0.5]).unwrap();
        assert!(matches!(
            encode_levels(&w_hat, &one(), PackFormat::Pack2),
            Err(Error::UnencodableLevel { .. })
        ));
        // the literal 4-level ternary grid does not fit ternary storage
        let w_hat = Matrix::row_vector(&[1.0]).unwrap();
        assert!(encode_levels(&w_hat, &one(), PackFormat::PackTrit243).is_err());
    }

    #[test]
    fn ternary_formats_agree() {
        let t = 1.0 / 1.5;
        let w_hat = Matrix::from_rows(&[&[t, 0.0, -t, 0.0, t, t, -t], &[0.0, 0.0, t, -t, -t, 0.0, t]]).unwrap();
        let s = ChannelScales::new(vec![0.3, 1.7]).unwrap();
        let a = decode(&encode_levels(&w_hat, &s, PackFormat::PackTrit243).unwrap()).unwrap();
        let b = decode(&encode_levels(&w_hat, &s, PackFormat::PackTernaryAs2Bit).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
