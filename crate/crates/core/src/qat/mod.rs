//! Toy-scale QAT experiments: budget allocation between full-precision
//! training and QAT, fine-tuning versus training from scratch, and weight
//! drift.
//!
//! Runs are deterministic in `(config, seed)`. Independent runs of a sweep
//! execute on the rayon pool; each run is single-threaded.

mod data;
mod experiments;
mod model;
mod train;

pub use data::{gen_dataset, Dataset, Split, TaskSpec, Teacher};
pub use experiments::{
    median, run_budget_sweep, run_drift, run_finetune_vs_scratch, run_split, weight_drift, CurvePoint, DriftReport,
    DriftRow, FtsCurvePoint, FtsResult, FtsRow, SweepResult, SweepRow, CURVE_CSV_HEADER,
};
pub use model::Model;
pub use train::{cosine_lr, evaluate, smooth, train_phase, BudgetSplit, LossCurve, Phase, PhaseConfig, TrainConfig, DEFAULT_RATIOS};
