use crate::error::{Error, Result};
use crate::quant::BitWidth;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Fixed-width storage layouts. The discriminant is the on-disk tag byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PackFormat {
    /// 1 bit per weight, levels `{-1, +1}`.
    Pack1 = 0,
    /// Five trits per byte as a base-3 numeral, levels `{-2/3, 0, 2/3}`.
    PackTrit243 = 1,
    /// 2 bits per weight, levels `(2c - 3)/4`.
    Pack2 = 2,
    /// Ternary levels stored in 2-bit slots (code 3 unused).
    PackTernaryAs2Bit = 3,
    /// 3 bits per weight, LSQ integers `-4..=3`.
    Pack3 = 4,
    /// 4 bits per weight, LSQ integers `-8..=7`.
    Pack4 = 5,
}

impl PackFormat {
    pub const ALL: [PackFormat; 6] = [
        PackFormat::Pack1,
        PackFormat::PackTrit243,
        PackFormat::Pack2,
        PackFormat::PackTernaryAs2Bit,
        PackFormat::Pack3,
        PackFormat::Pack4,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.tag() == tag)
            .ok_or_else(|| Error::CorruptPayload(format!("unknown format tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            PackFormat::Pack1 => "pack1",
            PackFormat::PackTrit243 => "trit243",
            PackFormat::Pack2 => "pack2",
            PackFormat::PackTernaryAs2Bit => "ternary2bit",
            PackFormat::Pack3 => "pack3",
            PackFormat::Pack4 => "pack4",
        }
    }

    /// Storage cost per weight (PackTrit243 is 8/5).
    pub fn bits_per_weight(self) -> f64 {
        match self {
            PackFormat::Pack1 => 1.0,
            PackFormat::PackTrit243 => 1.6,
            PackFormat::Pack2 | PackFormat::PackTernaryAs2Bit => 2.0,
            PackFormat::Pack3 => 3.0,
            PackFormat::Pack4 => 4.0,
        }
    }

    /// Width of a code slot for the plain bitstream formats.
    pub(crate) fn code_bits(self) -> Option<u32> {
        match self {
            PackFormat::Pack1 => Some(1),
            PackFormat::PackTrit243 => None,
            PackFormat::Pack2 | PackFormat::PackTernaryAs2Bit => Some(2),
            PackFormat::Pack3 => Some(3),
            PackFormat::Pack4 => Some(4),
        }
    }

    /// Normalized level of each code, in code order.
    pub fn level_table(self) -> Vec<f32> {
        match self {
            PackFormat::Pack1 => vec![-1.0, 1.0],
            PackFormat::PackTrit243 | PackFormat::PackTernaryAs2Bit => {
                vec![-1.0 / 1.5, 0.0, 1.0 / 1.5]
            }
            PackFormat::Pack2 => (0..4).map(|c| (2 * c - 3) as f32 / 4.0).collect(),
            PackFormat::Pack3 => (-4..=3).map(|v| v as f32).collect(),
            PackFormat::Pack4 => (-8..=7).map(|v| v as f32).collect(),
        }
    }

    /// Payload bytes of one row.
    pub fn row_bytes(self, cols: usize) -> usize {
        match self.code_bits() {
            Some(bits) => (cols * bits as usize).div_ceil(8),
            None => cols.div_ceil(5),
        }
    }

    /// Natural format for a learnable quantizer's bit width.
    pub fn for_bitwidth(bitwidth: BitWidth) -> Self {
        match bitwidth {
            BitWidth::One => PackFormat::Pack1,
            BitWidth::Ternary => PackFormat::PackTrit243,
            BitWidth::Two => PackFormat::Pack2,
            BitWidth::Three => PackFormat::Pack3,
            BitWidth::Four => PackFormat::Pack4,
        }
    }
}

impl fmt::Display for PackFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::Parse {
                field: "format".into(),
                message: format!(
                    "unknown format `{s}` (expected one of pack1, trit243, pack2, ternary2bit, pack3, pack4)"
                ),
            })
    }
}

/// Exact payload size in bytes, excluding scales (which add 4 bytes each).
pub fn storage_size(format: PackFormat, rows: usize, cols: usize) -> usize {
    rows * format.row_bytes(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_examples() {
        assert_eq!(storage_size(PackFormat::Pack2, 1, 1000), 250);
        assert_eq!(storage_size(PackFormat::PackTrit243, 1, 1000), 200);
        assert_eq!(storage_size(PackFormat::PackTernaryAs2Bit, 1, 1000), 250);
        assert_eq!(storage_size(PackFormat::Pack4, 1, 1000), 500);
        assert_eq!(storage_size(PackFormat::Pack3, 1, 1000), 375);
        assert_eq!(storage_size(PackFormat::Pack1, 1, 1000), 125);
        // ragged rows pad independently
        assert_eq!(storage_size(PackFormat::Pack3, 3, 9), 3 * 4);
        assert_eq!(storage_size(PackFormat::PackTrit243, 2, 6), 4);
        assert_eq!(storage_size(PackFormat::Pack1, 0, 0), 0);
    }

    #[test]
    fn tags_round_trip() {
        for f in PackFormat::ALL {
            assert_eq!(PackFormat::from_tag(f.tag()).unwrap(), f);
            assert_eq!(f.name().parse::<PackFormat>().unwrap(), f);
        }
        assert!(PackFormat::from_tag(6).is_err());
    }

    #[test]
    fn pack2_table() {
        assert_eq!(PackFormat::Pack2.level_table(), vec![-0.75, -0.25, 0.25, 0.75]);
    }
}
