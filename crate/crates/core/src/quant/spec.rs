use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Supported weight precisions. `Ternary` is the 1.58-bit (log₂3) case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum BitWidth {
    One,
    Ternary,
    Two,
    Three,
    Four,
}

impl BitWidth {
    pub const ALL: [BitWidth; 5] = [
        BitWidth::One,
        BitWidth::Ternary,
        BitWidth::Two,
        BitWidth::Three,
        BitWidth::Four,
    ];

    /// Nominal bit count as written in tables (1.58 for ternary).
    pub fn nominal(self) -> f64 {
        match self {
            BitWidth::One => 1.0,
            BitWidth::Ternary => 1.58,
            BitWidth::Two => 2.0,
            BitWidth::Three => 3.0,
            BitWidth::Four => 4.0,
        }
    }

    /// Number of quantization levels `k`: 3 for ternary, `2^bits` otherwise.
    pub fn levels(self) -> u32 {
        match self {
            BitWidth::One => 2,
            BitWidth::Ternary => 3,
            BitWidth::Two => 4,
            BitWidth::Three => 8,
            BitWidth::Four => 16,
        }
    }

    /// Integer clip bounds `(n, p) = (-2^(b-1), 2^(b-1) - 1)` of the LSQ branch.
    /// Only meaningful for 3 and 4 bits.
    pub fn lsq_bounds(self) -> (i32, i32) {
        match self {
            BitWidth::Three => (-4, 3),
            BitWidth::Four => (-8, 7),
            BitWidth::Two => (-2, 1),
            BitWidth::One | BitWidth::Ternary => (-1, 1),
        }
    }

    /// `p` used in the LSQ scale init and gradient scale; 1 for widths ≤ 2 bits.
    pub fn positive_levels(self) -> f32 {
        match self {
            BitWidth::Three => 3.0,
            BitWidth::Four => 7.0,
            _ => 1.0,
        }
    }
}

impl From<BitWidth> for f64 {
    fn from(b: BitWidth) -> f64 {
        b.nominal()
    }
}

impl TryFrom<f64> for BitWidth {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        const EPS: f64 = 1e-6;
        if (v - 1.0).abs() < EPS {
            Ok(BitWidth::One)
        } else if (v - 1.58).abs() < 0.01 || (v - 3f64.log2()).abs() < EPS {
            Ok(BitWidth::Ternary)
        } else if (v - 2.0).abs() < EPS {
            Ok(BitWidth::Two)
        } else if (v - 3.0).abs() < EPS {
            Ok(BitWidth::Three)
        } else if (v - 4.0).abs() < EPS {
            Ok(BitWidth::Four)
        } else {
            Err(Error::InvalidSpec(format!(
                "bit width {v} is not one of 1, 1.58, 2, 3, 4"
            )))
        }
    }
}

impl FromStr for BitWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ternary" | "1.58" | "1.585" => Ok(BitWidth::Ternary),
            other => other
                .parse::<f64>()
                .map_err(|e| Error::InvalidSpec(format!("bit width `{other}`: {e}")))
                .and_then(BitWidth::try_from),
        }
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitWidth::Ternary => f.write_str("1.58"),
            other => write!(f, "{}", other.nominal() as u32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantKind {
    /// `α·Sign(w)` with learnable α and clipped STE.
    ElasticBinary,
    /// Stretched elastic quant: balanced levels over `[-α, α]`.
    Seq,
    /// Learned step size: integer levels `n..=p` including zero.
    Lsq,
    MinMaxSym,
    MinMaxAsym,
    StatsBinary,
    StatsTernary,
}

impl QuantKind {
    pub fn is_learnable(self) -> bool {
        matches!(self, QuantKind::ElasticBinary | QuantKind::Seq | QuantKind::Lsq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Granularity {
    /// One scale per output row.
    #[default]
    PerChannel,
    PerTensor,
}

/// Multiplier applied to the reduced α gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum AlphaGradScale {
    /// `1 / sqrt(elements_per_channel · p)`.
    #[default]
    Lsq,
    Unit,
    Fixed(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bitwidth: BitWidth,
    pub kind: QuantKind,
    #[serde(default)]
    pub granularity: Granularity,
    /// Evaluate the SEQ formula literally for ternary (four levels
    /// `{-1, -1/3, 1/3, 1}`) instead of the balanced three-level grid.
    #[serde(default)]
    pub seq_literal_eq5: bool,
    #[serde(default)]
    pub alpha_grad_scale: AlphaGradScale,
}

impl QuantSpec {
    /// The learnable quantizer assigned to `bitwidth`: elastic binary for 1,
    /// SEQ for 1.58/2, LSQ for 3/4. Per-channel scales.
    pub fn paretoq(bitwidth: BitWidth) -> Self {
        let kind = match bitwidth {
            BitWidth::One => QuantKind::ElasticBinary,
            BitWidth::Ternary | BitWidth::Two => QuantKind::Seq,
            BitWidth::Three | BitWidth::Four => QuantKind::Lsq,
        };
        Self {
            bitwidth,
            kind,
            granularity: Granularity::PerChannel,
            seq_literal_eq5: false,
            alpha_grad_scale: AlphaGradScale::Lsq,
        }
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn with_grad_scale(mut self, scale: AlphaGradScale) -> Self {
        self.alpha_grad_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        use BitWidth::*;
        use QuantKind::*;
        let ok = match self.kind {
            ElasticBinary | StatsBinary => self.bitwidth == One,
            Seq => matches!(self.bitwidth, Ternary | Two),
            Lsq => matches!(self.bitwidth, Three | Four),
            StatsTernary => self.bitwidth == Ternary,
            MinMaxSym | MinMaxAsym => matches!(self.bitwidth, Two | Three | Four),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "{:?} does not support {} bits",
                self.kind, self.bitwidth
            )))
        }
    }

    /// Validation for the learnable family only.
    pub fn validate_learnable(&self) -> Result<()> {
        if !self.kind.is_learnable() {
            return Err(Error::InvalidSpec(format!(
                "{:?} is not a learnable-scale quantizer",
                self.kind
            )));
        }
        self.validate()
    }

    /// Every value a normalized level ŵ may take, ascending.
    pub fn level_set(&self) -> Vec<f32> {
        match (self.kind, self.bitwidth) {
            (QuantKind::ElasticBinary, _) => vec![-1.0, 1.0],
            (QuantKind::Seq, BitWidth::Ternary) if self.seq_literal_eq5 => {
                (-2..=1).map(|r| (r as f32 + 0.5) / 3.0 * 2.0).collect()
            }
            (QuantKind::Seq, BitWidth::Ternary) => (-1..=1).map(|r| r as f32 / 1.5).collect(),
            (QuantKind::Seq, b) => {
                let k = b.levels() as i32;
                (-k / 2..k / 2)
                    .map(|r| (r as f32 + 0.5) / k as f32 * 2.0)
                    .collect()
            }
            (_, b) => {
                let (n, p) = b.lsq_bounds();
                (n..=p).map(|v| v as f32).collect()
            }
        }
    }

    /// Gradient multiplier for α given the number of elements sharing it.
    pub fn alpha_grad_multiplier(&self, elements_per_scale: usize) -> f32 {
        match self.alpha_grad_scale {
            AlphaGradScale::Unit => 1.0,
            AlphaGradScale::Fixed(g) => g,
            AlphaGradScale::Lsq => {
                let denom = elements_per_scale.max(1) as f64 * self.bitwidth.positive_levels() as f64;
                (1.0 / denom.sqrt()) as f32
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_constants() {
        assert_eq!(BitWidth::Ternary.levels(), 3);
        assert_eq!(BitWidth::Two.levels(), 4);
        assert_eq!(BitWidth::Four.lsq_bounds(), (-8, 7));
        assert_eq!(BitWidth::Three.lsq_bounds(), (-4, 3));
    }

    #[test]
    fn kind_bitwidth_compatibility() {
        for b in BitWidth::ALL {
            assert!(QuantSpec::paretoq(b).validate_learnable().is_ok());
        }
        let bad = QuantSpec {
            kind: QuantKind::Seq,
            ..QuantSpec::paretoq(BitWidth::Four)
        };
        assert!(bad.validate().is_err());
        let bad = QuantSpec {
            kind: QuantKind::ElasticBinary,
            ..QuantSpec::paretoq(BitWidth::Two)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_sets() {
        assert_eq!(
            QuantSpec::paretoq(BitWidth::Two).level_set(),
            vec![-0.75, -0.25, 0.25, 0.75]
        );
        let t = QuantSpec::paretoq(BitWidth::Ternary).level_set();
        assert_eq!(t, vec![-1.0 / 1.5, 0.0, 1.0 / 1.5]);
        let mut lit = QuantSpec::paretoq(BitWidth::Ternary);
        lit.seq_literal_eq5 = true;
        let l = lit.level_set();
        assert_eq!(l.len(), 4);
        assert_eq!(l[0], -1.0);
        assert_eq!(l[3], 1.0);
        assert_eq!(QuantSpec::paretoq(BitWidth::Four).level_set().len(), 16);
    }

    #[test]
    fn parse_bitwidths() {
        assert_eq!("1.58".parse::<BitWidth>().unwrap(), BitWidth::Ternary);
        assert_eq!("4".parse::<BitWidth>().unwrap(), BitWidth::Four);
        assert!("5".parse::<BitWidth>().is_err());
        let json = serde_json::to_string(&BitWidth::Ternary).unwrap();
        assert_eq!(serde_json::from_str::<BitWidth>(&json).unwrap(), BitWidth::Ternary);
    }

    #[test]
    fn lsq_grad_scale() {
        let s = QuantSpec::paretoq(BitWidth::Four);
        assert!((s.alpha_grad_multiplier(28) - 1.0 / 14.0).abs() < 1e-7);
        let s = QuantSpec::paretoq(BitWidth::Two);
        assert!((s.alpha_grad_multiplier(16) - 0.25).abs() < 1e-7);
        assert_eq!(s.with_grad_scale(AlphaGradScale::Unit).alpha_grad_multiplier(16), 1.0);
    }
}
