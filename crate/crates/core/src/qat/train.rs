use super::data::{Dataset, TaskSpec};
use super::model::Model;
use crate::autodiff::{adamw_step, AdamState, AdamW};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{BitWidth, QuantSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Smallest α kept after an optimizer step.
const ALPHA_FLOOR: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Initial learning rate; decays to zero over the phase.
    pub lr: f32,
    #[serde(default)]
    pub weight_decay: f32,
}

/// Everything a QAT experiment needs. Loaded from JSON; every field has a
/// default so partial documents are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub n_samples: usize,
    pub data_seed: u64,
    /// Width of the embedding and hidden layers.
    pub width: usize,
    /// Number of fake-quantizable hidden layers.
    pub hidden_layers: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub fp: PhaseConfig,
    pub qat: PhaseConfig,
    pub betas: [f32; 2],
    pub bitwidth: BitWidth,
    pub seeds: Vec<u64>,
    pub ratios: Vec<f64>,
    /// FP steps used to produce the converged init for fine-tune runs.
    pub fts_fp_steps: usize,
    pub fts_grid: Vec<usize>,
    /// Record the training loss every this many steps.
    pub log_every: usize,
}

pub const DEFAULT_RATIOS: [f64; 12] = [0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 1.0];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            n_samples: 100_000,
            data_seed: 17,
            width: 128,
            hidden_layers: 2,
            batch_size: 32,
            total_steps: 6_000,
            fp: PhaseConfig {
                lr: 1e-3,
                weight_decay: 0.0,
            },
            qat: PhaseConfig {
                lr: 2e-4,
                weight_decay: 0.0,
            },
            betas: [0.9, 0.999],
            bitwidth: BitWidth::Two,
            seeds: vec![0, 1, 2],
            ratios: DEFAULT_RATIOS.to_vec(),
            fts_fp_steps: 4_000,
            fts_grid: vec![250, 500, 1_000, 2_000],
            log_every: 10,
        }
    }
}

fn bad(field: &str, message: &str) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse {
                field: if path == "." { "config".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.n_samples < 2 {
            return Err(bad("n_samples", "must be at least 2"));
        }
        if self.width == 0 {
            return Err(bad("width", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(bad("log_every", "must be at least 1"));
        }
        for (name, p) in [("fp", &self.fp), ("qat", &self.qat)] {
            if !p.lr.is_finite() || p.lr < 0.0 {
                return Err(bad(&format!("{name}.lr"), "must be a non-negative number"));
            }
            if !p.weight_decay.is_finite() || p.weight_decay < 0.0 {
                return Err(bad(&format!("{name}.weight_decay"), "must be a non-negative number"));
            }
        }
        for (i, b) in self.betas.iter().enumerate() {
            if !(0.0..1.0).contains(b) {
                return Err(bad(&format!("betas[{i}]"), "must lie in [0, 1)"));
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "must not be empty"));
        }
        for r in &self.ratios {
            if !(0.0..=1.0).contains(r) {
                return Err(bad("ratios", &format!("{r} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> QuantSpec {
        QuantSpec::paretoq(self.bitwidth)
    }

    pub fn spec_for(&self, bitwidth: BitWidth) -> QuantSpec {
        QuantSpec::paretoq(bitwidth)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        super::data::gen_dataset(&self.task, self.data_seed, self.n_samples)
    }

    pub fn model(&self, seed: u64) -> Model {
        Model::new(self.task.input_dim(), self.width, self.task.classes, self.hidden_layers, seed)
    }

    fn optimizer(&self, phase: &PhaseConfig) -> AdamW {
        AdamW {
            lr: phase.lr,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: 1e-8,
            weight_decay: phase.weight_decay,
        }
    }
}

/// Division of a step budget between full-precision training and QAT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSplit {
    pub total_steps: usize,
    pub fp_ratio: f64,
}

impl BudgetSplit {
    pub fn new(total_steps: usize, fp_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fp_ratio) {
            return Err(Error::InvalidArgument(format!("ratio {fp_ratio} is outside [0, 1]")));
        }
        Ok(Self { total_steps, fp_ratio })
    }

    pub fn fp_steps(&self) -> usize {
        (self.fp_ratio * self.total_steps as f64).round() as usize
    }

    pub fn qat_steps(&self) -> usize {
        self.total_steps - self.fp_steps()
    }

    /// Ratio 1 skips QAT entirely: the FP model is quantized once.
    pub fn is_ptq(&self) -> bool {
        self.qat_steps() == 0
    }
}

/// Cosine decay from `lr0` at step 0 towards zero at step `steps`.
pub fn cosine_lr(lr0: f32, step: usize, steps: usize) -> f32 {
    if steps == 0 {
        return lr0;
    }
    let t = step as f64 / steps as f64;
    (lr0 as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fp,
    Qat,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Fp => "fp",
            Phase::Qat => "qat",
        })
    }
}

/// `(step, training batch loss)` samples.
pub type LossCurve = Vec<(usize, f32)>;

/// Runs one phase of `steps` AdamW updates on a fresh cosine cycle. In the
/// quantized phase α is first initialized from the current weights.
pub fn train_phase(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &mut Model,
    steps: usize,
    quant: Option<&QuantSpec>,
    seed: u64,
) -> Result<LossCurve> {
    let phase = if quant.is_some() { &cfg.qat } else { &cfg.fp };
    if let Some(spec) = quant {
        model.init_scales(spec)?;
    }
    if steps == 0 {
        return Ok(Vec::new());
    }
    let opt = cfg.optimizer(phase);
    let ids = model.trainable(quant.is_some());
    let scale_ids = model.scales();
    let mut graph = model.graph(quant)?;
    let mut state = AdamState::new();
    let salt = if quant.is_some() { 0x9a7 } else { 0xf9 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt);
    let n = data.train.len();
    let mut indices = vec![0usize; cfg.batch_size];
    let mut curve = Vec::with_capacity(steps / cfg.log_every + 1);
    for step in 0..steps {
        indices.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        let (x, y) = data.train.gather(&indices);
        let loss = graph.forward(&model.params, &[x], &y)?;
        if step % cfg.log_every == 0 || step + 1 == steps {
            curve.push((step, loss));
        }
        let grads = graph.backward()?;
        let lr = cosine_lr(phase.lr, step, steps);
        adamw_step(&mut model.params, &grads, &ids, &mut state, &opt, lr);
        if quant.is_some() {
            for &id in &scale_ids {
                let a = model.params.get_mut(id);
                for v in a.data_mut() {
                    *v = if v.is_finite() { v.max(ALPHA_FLOOR) } else { ALPHA_FLOOR };
                }
            }
        }
    }
    Ok(curve)
}

/// Validation loss, fake-quantized with the model's current α when `quant`
/// is set.
pub fn evaluate(model: &Model, data: &Dataset, quant: Option<&QuantSpec>) -> Result<f32> {
    model.loss(&data.val.x, &data.val.y, quant)
}

/// Moving average with a trailing window.
pub fn smooth(values: &[f32], window: usize) -> Vec<f32> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        sum += v as f64;
        if i >= window {
            sum -= values[i - window] as f64;
        }
        out.push((sum / (i + 1).min(window) as f64) as f32);
    }
    out
}

/// Checks the shapes of two parameter lists before comparing them.
pub(crate) fn ensure_same_shapes(a: &[Matrix], b: &[Matrix]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} layers", a.len()), format!("{}", b.len())));
    }
    a.iter().zip(b).try_for_each(|(x, y)| x.ensure_same_shape(y))
}
