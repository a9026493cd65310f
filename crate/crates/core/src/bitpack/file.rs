//! `PQPK` container: magic, version, format tag, `rows`/`cols`/scale count
//! as u32-LE, scales as f32-LE, then the payload.

use super::{storage_size, PackFormat, PackedMatrix};
use crate::error::{Error, Result};
use crate::quant::ChannelScales;

pub const MAGIC: &[u8; 4] = b"PQPK";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 4;

pub fn write_packed(p: &PackedMatrix) -> Vec<u8> {
    let scales = p.scales().as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * scales.len() + p.payload().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(p.format().tag());
    out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(p.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(scales.len() as u32).to_le_bytes());
    for s in scales {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(p.payload());
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(Error::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let b = take(bytes, at, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_packed(bytes: &[u8]) -> Result<PackedMatrix> {
    let mut at = 0usize;
    if take(bytes, &mut at, 4)? != MAGIC {
        return Err(Error::CorruptPayload("bad magic, expected PQPK".into()));
    }
    let version = take(bytes, &mut at, 1)?[0];
    if version != VERSION {
        return Err(Error::CorruptPayload(format!("unsupported version {version}")));
    }
    let format = PackFormat::from_tag(take(bytes, &mut at, 1)?[0])?;
    let rows = u32_at(bytes, &mut at)? as usize;
    let cols = u32_at(bytes, &mut at)? as usize;
    let count = u32_at(bytes, &mut at)? as usize;
    let scale_bytes = take(bytes, &mut at, count.checked_mul(4).ok_or_else(|| {
        Error::CorruptPayload("scale count overflows".into())
    })?)?;
    let scales: Vec<f32> = scale_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let scales = ChannelScales::new(scales)?;
    let payload_len = storage_size(format, rows, cols);
    let payload = take(bytes, &mut at, payload_len)?.to_vec();
    if at != bytes.len() {
        return Err(Error::CorruptPayload(format!(
            "{} trailing bytes after payload",
            bytes.len() - at
        )));
    }
    PackedMatrix::from_parts(format, rows, cols, payload, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitpack::encode_levels;
    use crate::matrix::Matrix;

    #[test]
    fn header_layout() {
        let w_hat = Matrix::row_vector(&[0.75, -0.75, -0.25, 0.25]).unwrap();
        let p = encode_levels(&w_hat, &ChannelScales::new(vec![2.0]).unwrap(), PackFormat::Pack2).unwrap();
        let bytes = write_packed(&p);
        let expected: Vec<u8> = [
            &b"PQPK"[..],
            &[1, 2],
            &[1, 0, 0, 0],
            &[4, 0, 0, 0],
            &[1, 0, 0, 0],
            &2.0f32.to_le_bytes(),
            &[0x93],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(read_packed(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_packed(b"PQP").is_err());
        assert!(matches!(read_packed(b"XXXX\x01\x02"), Err(Error::CorruptPayload(_))));
        let w_hat = Matrix::row_vector(&[1.0, -1.0]).unwrap();
        let p = encode_levels(&w_hat, &ChannelScales::new(vec![1.0]).unwrap(), PackFormat::Pack1).unwrap();
        let mut bytes = write_packed(&p);
        bytes.pop();
        assert!(matches!(read_packed(&bytes), Err(Error::Truncated { .. })));
        let mut bytes = write_packed(&p);
        bytes.push(0);
        assert!(read_packed(&bytes).is_err());
        let mut bytes = write_packed(&p);
        bytes[4] = 9;
        assert!(read_packed(&bytes).is_err());
        // zero scale violates the positivity invariant
        let mut bytes = write_packed(&p);
        bytes[18..22].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(read_packed(&bytes).is_err());
    }
}
