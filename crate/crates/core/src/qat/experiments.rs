use super::data::Dataset;
use super::train::{ensure_same_shapes, evaluate, train_phase, BudgetSplit, LossCurve, Phase, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{BitWidth, QuantSpec};
use rayon::prelude::*;
use serde::Serialize;

/// Relative L1 change of each quantizable layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub per_layer: Vec<f64>,
    pub mean: f64,
}

/// `‖W_final − W_init‖₁ / ‖W_init‖₁` per layer and its unweighted mean.
/// An all-zero initial layer has drift 0 if unchanged and is an error
/// otherwise.
pub fn weight_drift(init: &[Matrix], fin: &[Matrix]) -> Result<DriftReport> {
    ensure_same_shapes(init, fin)?;
    let per_layer = init
        .iter()
        .zip(fin)
        .enumerate()
        .map(|(i, (a, b))| {
            let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (y - x).abs() as f64).sum();
            let base = a.l1_norm();
            if base == 0.0 {
                if diff == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::InvalidArgument(format!("layer {i} starts at zero; relative drift is undefined")))
                }
            } else {
                Ok(diff / base)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = if per_layer.is_empty() {
        0.0
    } else {
        per_layer.iter().sum::<f64>() / per_layer.len() as f64
    };
    Ok(DriftReport { per_layer, mean })
}

/// One training-loss sample of a budget-sweep run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub seed: u64,
    pub phase: Phase,
    pub step: usize,
    pub loss: f32,
}

pub const CURVE_CSV_HEADER: &str = "ratio,seed,phase,step,loss";

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.ratio, self.seed, self.phase, self.step, self.loss)
    }
}

fn tag(curve: LossCurve, ratio: f64, seed: u64, phase: Phase) -> impl Iterator<Item = CurvePoint> {
    curve.into_iter().map(move |(step, loss)| CurvePoint {
        ratio,
        seed,
        phase,
        step,
        loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub fp_steps: usize,
    pub qat_steps: usize,
    pub val_loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<CurvePoint>,
}

pub fn median(values: &mut [f32]) -> f32 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "ratio,seed,fp_steps,qat_steps,val_loss";

    /// Median validation loss over seeds for each ratio, in ratio order.
    pub fn median_by_ratio(&self) -> Vec<(f64, f32)> {
        let mut ratios: Vec<f64> = self.rows.iter().map(|r| r.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        ratios
            .into_iter()
            .map(|ratio| {
                let mut losses: Vec<f32> = self.rows.iter().filter(|r| r.ratio == ratio).map(|r| r.val_loss).collect();
                (ratio, median(&mut losses))
            })
            .collect()
    }
}

/// FP for `split.fp_steps()` then QAT for the rest (a single fake-quant
/// evaluation when nothing is left), from one seed.
pub fn run_split(cfg: &TrainConfig, data: &Dataset, split: BudgetSplit, spec: &QuantSpec, seed: u64) -> Result<(f32, Vec<CurvePoint>)> {
    let mut model = cfg.model(seed);
    let fp = train_phase(cfg, data, &mut model, split.fp_steps(), None, seed)?;
    let qat = train_phase(cfg, data, &mut model, split.qat_steps(), Some(spec), seed)?;
    let loss = evaluate(&model, data, Some(spec))?;
    let curves = tag(fp, split.fp_ratio, seed, Phase::Fp)
        .chain(tag(qat, split.fp_ratio, seed, Phase::Qat))
        .collect();
    Ok((loss, curves))
}

/// Budget-allocation sweep over `cfg.ratios × cfg.seeds`. Runs are
/// independent and execute in parallel; output order is fixed.
pub fn run_budget_sweep(cfg: &TrainConfig, spec: &QuantSpec) -> Result<SweepResult> {
    cfg.validate()?;
    spec.validate_learnable()?;
    let data = cfg.dataset()?;
    let jobs: Vec<(f64, u64)> = cfg
        .ratios
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(ratio, seed)| {
            let split = BudgetSplit::new(cfg.total_steps, ratio)?;
            let (val_loss, curves) = run_split(cfg, &data, split, spec, seed)?;
            Ok((
                SweepRow {
                    ratio,
                    seed,
                    fp_steps: split.fp_steps(),
                    qat_steps: split.qat_steps(),
                    val_loss,
                },
                curves,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SweepResult {
        rows: Vec::with_capacity(results.len()),
        curves: Vec::new(),
    };
    for (row, curves) in results {
        out.rows.push(row);
        out.curves.extend(curves);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtsRow {
    pub bitwidth: BitWidth,
    pub qat_steps: usize,
    pub seed: u64,
    /// QAT from the converged FP model.
    pub finetuned: f32,
    /// QAT from random init.
    pub scratch: f32,
    /// Unquantized validation loss of the FP init.
    pub fp_baseline: f32,
    /// Mean relative L1 drift of the fine-tuned quantizable layers.
    pub drift: f64,
}

/// Training-loss sample of a fine-tune-vs-scratch run. The FP init curve
/// has `qat_steps` 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtsCurvePoint {
    pub bitwidth: Option<BitWidth>,
    pub qat_steps: usize,
    pub seed: u64,
    pub run: &'static str,
    pub step: usize,
    pub loss: f32,
}

impl FtsCurvePoint {
    pub const CSV_HEADER: &'static str = "bitwidth,qat_steps,seed,run,step,loss";

    pub fn csv_row(&self) -> String {
        let bw = self.bitwidth.map(|b| b.to_string()).unwrap_or_else(|| "fp".into());
        format!("{bw},{},{},{},{},{}", self.qat_steps, self.seed, self.run, self.step, self.loss)
    }
}

fn fts_tag(curve: LossCurve, bitwidth: Option<BitWidth>, qat_steps: usize, seed: u64, run: &'static str) -> impl Iterator<Item = FtsCurvePoint> {
    curve.into_iter().map(move |(step, loss)| FtsCurvePoint {
        bitwidth,
        qat_steps,
        seed,
        run,
        step,
        loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtsResult {
    pub rows: Vec<FtsRow>,
    pub curves: Vec<FtsCurvePoint>,
}

impl FtsResult {
    pub const CSV_HEADER: &'static str = "bitwidth,qat_steps,seed,finetuned,scratch,fp_baseline,drift";

    /// `(qat_steps, median finetuned, median scratch, median drift)` per
    /// budget for one bit-width.
    pub fn medians(&self, bitwidth: BitWidth) -> Vec<(usize, f32, f32, f64)> {
        let mut budgets: Vec<usize> = self.rows.iter().filter(|r| r.bitwidth == bitwidth).map(|r| r.qat_steps).collect();
        budgets.sort_unstable();
        budgets.dedup();
        budgets
            .into_iter()
            .map(|q| {
                let sel: Vec<&FtsRow> = self.rows.iter().filter(|r| r.bitwidth == bitwidth && r.qat_steps == q).collect();
                let mut ft: Vec<f32> = sel.iter().map(|r| r.finetuned).collect();
                let mut sc: Vec<f32> = sel.iter().map(|r| r.scratch).collect();
                let mut dr: Vec<f32> = sel.iter().map(|r| r.drift as f32).collect();
                (q, median(&mut ft), median(&mut sc), median(&mut dr) as f64)
            })
            .collect()
    }

    pub fn median_fp_baseline(&self) -> f32 {
        let mut seen = std::collections::BTreeMap::new();
        for r in &self.rows {
            seen.entry(r.seed).or_insert(r.fp_baseline);
        }
        median(&mut seen.into_values().collect::<Vec<_>>())
    }
}

/// Fine-tune versus scratch QAT at each budget in `cfg.fts_grid`, for each
/// bit-width and seed. Fine-tune runs start from one FP model per seed
/// trained for `cfg.fts_fp_steps`; scratch runs start from the same random
/// init that FP model started from.
pub fn run_finetune_vs_scratch(cfg: &TrainConfig, bitwidths: &[BitWidth]) -> Result<FtsResult> {
    cfg.validate()?;
    if cfg.fts_grid.is_empty() {
        return Err(Error::InvalidArgument("fine-tune grid is empty".into()));
    }
    let data = cfg.dataset()?;
    let inits = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut model = cfg.model(seed);
            let curve = train_phase(cfg, &data, &mut model, cfg.fts_fp_steps, None, seed)?;
            let fp_loss = evaluate(&model, &data, None)?;
            Ok((seed, model, fp_loss, curve))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (idx, _) in inits.iter().enumerate() {
        for &bw in bitwidths {
            for &q in &cfg.fts_grid {
                jobs.push((idx, bw, q));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(idx, bw, q)| {
            let (seed, init, fp_baseline, _) = &inits[idx];
            let spec = cfg.spec_for(bw);
            let mut ft = init.clone();
            let ft_curve = train_phase(cfg, &data, &mut ft, q, Some(&spec), *seed)?;
            let finetuned = evaluate(&ft, &data, Some(&spec))?;
            let drift = weight_drift(&init.quantizable_weights(), &ft.quantizable_weights())?.mean;
            let mut sc = cfg.model(*seed);
            let sc_curve = train_phase(cfg, &data, &mut sc, q, Some(&spec), *seed)?;
            let scratch = evaluate(&sc, &data, Some(&spec))?;
            let curves: Vec<FtsCurvePoint> = fts_tag(ft_curve, Some(bw), q, *seed, "finetune")
                .chain(fts_tag(sc_curve, Some(bw), q, *seed, "scratch"))
                .collect();
            Ok((
                FtsRow {
                    bitwidth: bw,
                    qat_steps: q,
                    seed: *seed,
                    finetuned,
                    scratch,
                    fp_baseline: *fp_baseline,
                    drift,
                },
                curves,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = FtsResult {
        rows: Vec::new(),
        curves: Vec::new(),
    };
    for (seed, _, _, curve) in &inits {
        out.curves.extend(fts_tag(curve.clone(), None, 0, *seed, "fp"));
    }
    for (row, curves) in results {
        out.rows.push(row);
        out.curves.extend(curves);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub bitwidth: BitWidth,
    pub seed: u64,
    pub qat_steps: usize,
    pub per_layer: Vec<f64>,
    pub mean: f64,
}

impl DriftRow {
    pub const CSV_HEADER: &'static str = "bitwidth,seed,qat_steps,layer,drift";
}

/// QAT of `qat_steps` from one converged FP model per seed, at each
/// bit-width, reporting how far the quantizable weights move.
pub fn run_drift(cfg: &TrainConfig, bitwidths: &[BitWidth], qat_steps: usize) -> Result<Vec<DriftRow>> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    let inits = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut model = cfg.model(seed);
            train_phase(cfg, &data, &mut model, cfg.fts_fp_steps, None, seed)?;
            Ok((seed, model))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, BitWidth)> = (0..inits.len()).flat_map(|i| bitwidths.iter().map(move |&b| (i, b))).collect();
    jobs.par_iter()
        .map(|&(i, bw)| {
            let (seed, init) = &inits[i];
            let mut m = init.clone();
            train_phase(cfg, &data, &mut m, qat_steps, Some(&cfg.spec_for(bw)), *seed)?;
            let report = weight_drift(&init.quantizable_weights(), &m.quantizable_weights())?;
            Ok(DriftRow {
                bitwidth: bw,
                seed: *seed,
                qat_steps,
                per_layer: report.per_layer,
                mean: report.mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_examples() {
        let init = [Matrix::row_vector(&[1.0, 1.0]).unwrap()];
        let fin = [Matrix::row_vector(&[0.5, 1.5]).unwrap()];
        assert_eq!(weight_drift(&init, &fin).unwrap().mean, 0.5);
        assert_eq!(weight_drift(&init, &init).unwrap().mean, 0.0);
        let zero = [Matrix::zeros(1, 2)];
        assert_eq!(weight_drift(&zero, &zero).unwrap().mean, 0.0);
        assert!(weight_drift(&zero, &init).is_err());
        assert!(weight_drift(&init, &[Matrix::zeros(2, 1)]).is_err());
        assert!(weight_drift(&init, &[]).is_err());
    }

    #[test]
    fn drift_mean_is_unweighted() {
        let init = [Matrix::row_vector(&[1.0]).unwrap(), Matrix::filled(1, 100, 1.0)];
        let fin = [Matrix::row_vector(&[2.0]).unwrap(), Matrix::filled(1, 100, 1.0)];
        let r = weight_drift(&init, &fin).unwrap();
        assert_eq!(r.per_layer, vec![1.0, 0.0]);
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            n_samples: 300,
            width: 8,
            batch_size: 4,
            total_steps: 20,
            seeds: vec![0, 1],
            ratios: vec![0.0, 0.5, 1.0],
            fts_fp_steps: 10,
            fts_grid: vec![0, 5],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = tiny();
        let a = run_budget_sweep(&cfg, &cfg.spec()).unwrap();
        assert_eq!(a.rows.len(), 6);
        for r in &a.rows {
            assert_eq!(r.fp_steps + r.qat_steps, cfg.total_steps);
        }
        assert_eq!(a.rows[0].fp_steps, 0);
        assert_eq!(a.rows[5].qat_steps, 0);
        assert!(a.curves.iter().all(|c| !(c.ratio == 1.0 && c.phase == Phase::Qat)));
        assert_eq!(run_budget_sweep(&cfg, &cfg.spec()).unwrap(), a);
        assert_eq!(a.median_by_ratio().len(), 3);
    }

    #[test]
    fn zero_budget_finetune_is_ptq() {
        let cfg = tiny();
        let r = run_finetune_vs_scratch(&cfg, &[BitWidth::Two]).unwrap();
        let data = cfg.dataset().unwrap();
        for row in r.rows.iter().filter(|r| r.qat_steps == 0) {
            let mut m = cfg.model(row.seed);
            train_phase(&cfg, &data, &mut m, cfg.fts_fp_steps, None, row.seed).unwrap();
            m.init_scales(&cfg.spec()).unwrap();
            assert_eq!(row.finetuned, evaluate(&m, &data, Some(&cfg.spec())).unwrap());
            assert_eq!(row.drift, 0.0);
        }
    }

    #[test]
    fn ptq_endpoint_equals_split_with_no_qat() {
        let cfg = tiny();
        let data = cfg.dataset().unwrap();
        let spec = cfg.spec();
        let (loss, curves) = run_split(&cfg, &data, BudgetSplit::new(20, 1.0).unwrap(), &spec, 3).unwrap();
        assert!(curves.iter().all(|c| c.phase == Phase::Fp));
        let mut m = cfg.model(3);
        train_phase(&cfg, &data, &mut m, 20, None, 3).unwrap();
        m.init_scales(&spec).unwrap();
        assert_eq!(loss, evaluate(&m, &data, Some(&spec)).unwrap());
    }

    #[test]
    fn drift_run_reports_every_pair() {
        let cfg = tiny();
        let rows = run_drift(&cfg, &[BitWidth::Two, BitWidth::Four], 5).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.mean > 0.0 && r.per_layer.len() == 2));
    }
}
