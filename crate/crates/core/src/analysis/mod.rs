//! Effective quantized model size and accuracy/size Pareto frontiers.

mod csvio;

pub use csvio::{read_points, write_front, MetricSource, FRONT_CSV_HEADER};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Bit-widths a [`SizeSpec`] accepts.
pub const ALLOWED_BITS: [f64; 7] = [1.0, 1.58, 2.0, 3.0, 4.0, 8.0, 16.0];

/// How 1.58-bit weights are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TernaryAccounting {
    /// `log₂ 3` bits per weight.
    #[default]
    Analytic,
    /// 1.6 bits per weight, the cost of five trits per byte.
    StorageHonest,
}

impl TernaryAccounting {
    pub fn bits(self) -> f64 {
        match self {
            TernaryAccounting::Analytic => 3f64.log2(),
            TernaryAccounting::StorageHonest => 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub n_weights: u64,
    pub weight_bits: f64,
    pub n_embedding_weights: u64,
    pub embedding_bits: f64,
    #[serde(default)]
    pub ternary: TernaryAccounting,
}

fn check_bits(field: &str, bits: f64) -> Result<()> {
    if ALLOWED_BITS.contains(&bits) {
        Ok(())
    } else {
        Err(Error::Parse {
            field: field.into(),
            message: format!("{bits} is not one of 1, 1.58, 2, 3, 4, 8, 16"),
        })
    }
}

impl SizeSpec {
    pub fn new(n_weights: u64, weight_bits: f64, n_embedding_weights: u64, embedding_bits: f64) -> Result<Self> {
        let s = Self {
            n_weights,
            weight_bits,
            n_embedding_weights,
            embedding_bits,
            ternary: TernaryAccounting::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_ternary(mut self, ternary: TernaryAccounting) -> Self {
        self.ternary = ternary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_bits("weight_bits", self.weight_bits)?;
        check_bits("embedding_bits", self.embedding_bits)
    }

    fn effective_bits(&self, bits: f64) -> f64 {
        if bits == 1.58 {
            self.ternary.bits()
        } else {
            bits
        }
    }
}

/// `(#weights · weight bits + #embedding weights · embedding bits) / 8` bytes.
pub fn effective_size(spec: &SizeSpec) -> f64 {
    (spec.n_weights as f64 * spec.effective_bits(spec.weight_bits)
        + spec.n_embedding_weights as f64 * spec.effective_bits(spec.embedding_bits))
        / 8.0
}

/// A model configuration scored by size and a higher-is-better metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub size_bytes: f64,
    pub metric: f64,
    pub label: String,
}

impl ParetoPoint {
    pub fn new(size_bytes: f64, metric: f64, label: impl Into<String>) -> Result<Self> {
        if !(size_bytes.is_finite() && size_bytes > 0.0) {
            return Err(Error::InvalidArgument(format!("size_bytes must be positive, got {size_bytes}")));
        }
        if !metric.is_finite() {
            return Err(Error::InvalidArgument(format!("metric must be finite, got {metric}")));
        }
        Ok(Self {
            size_bytes,
            metric,
            label: label.into(),
        })
    }

    /// Smaller-or-equal size and greater-or-equal metric, strictly better in
    /// at least one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.size_bytes <= other.size_bytes
            && self.metric >= other.metric
            && (self.size_bytes < other.size_bytes || self.metric > other.metric)
    }
}

/// Non-dominated points sorted by size. Among identical `(size, metric)`
/// pairs only the first in input order is kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("pareto_front needs at least one point".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    // stable: equal (size, metric) pairs keep input order
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.size_bytes
            .total_cmp(&q.size_bytes)
            .then(q.metric.total_cmp(&p.metric))
    });
    let mut front = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for i in order {
        // every earlier point is no larger, so only a strictly higher metric survives
        if points[i].metric > best {
            best = points[i].metric;
            front.push(points[i].clone());
        }
    }
    Ok(front)
}
