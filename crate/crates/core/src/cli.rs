//! The `paretoq` command line.
//!
//! Every subcommand writes CSV or JSON to stdout. Experiment commands also
//! write their loss curves under `--out` when it is given.

use crate::analysis::{self, effective_size, pareto_front, SizeSpec, TernaryAccounting};
use crate::bitpack::{self, PackFormat};
use crate::error::{Error, Result};
use crate::matrix::read_matrix_csv;
use crate::qat::{self, TrainConfig};
use crate::qgemm::{run_bench, BenchReport};
use crate::quant::{init_scale, paretoq_forward, BitWidth, Granularity, QuantSpec};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "paretoq", version, about = "Extremely low-bit weight quantization toolkit")]
pub struct Cli {
    /// Base seed. Experiments use data seed `S` and run seeds `S, S+1, ...`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training config JSON for sweep/fts/drift.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for experiment outputs.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a CSV matrix and write a packed `.pqpk` file.
    Quantize(QuantizeArgs),
    /// Describe a packed file: shape, size and level histogram (JSON).
    Inspect {
        file: PathBuf,
    },
    /// Time packed GEMV (CSV).
    Bench(BenchArgs),
    /// FP/QAT budget-allocation sweep (CSV).
    Sweep(SweepArgs),
    /// Fine-tune versus scratch QAT (CSV).
    Fts(BitsArgs),
    /// Relative L1 weight drift after QAT (CSV).
    Drift(DriftArgs),
    /// Pareto frontier of a points CSV (CSV).
    Pareto {
        /// CSV with `size_bytes`, `metric` or `loss`, and optional `label`.
        input: PathBuf,
    },
    /// Effective quantized model size in bytes.
    Size(SizeArgs),
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Headerless CSV, one weight row per line.
    pub input: PathBuf,
    /// Output `.pqpk` path.
    #[arg(short, long)]
    pub output: PathBuf,
    /// 1, 1.58, 2, 3 or 4.
    #[arg(long, value_parser = parse_bits)]
    pub bits: BitWidth,
    /// Store 1.58-bit weights as 2-bit codes instead of five trits per byte.
    #[arg(long)]
    pub ternary_as_2bit: bool,
    /// One scale for the whole matrix instead of one per row.
    #[arg(long)]
    pub per_tensor: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Format name, or `all`.
    #[arg(long, default_value = "all")]
    pub format: String,
    #[arg(long, default_value_t = 4096)]
    pub rows: usize,
    #[arg(long, default_value_t = 4096)]
    pub cols: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Bit width to quantize to; defaults to the config's.
    #[arg(long, value_parser = parse_bits)]
    pub bits: Option<BitWidth>,
    /// Total step budget; defaults to the config's.
    #[arg(long)]
    pub total_steps: Option<usize>,
    /// Comma-separated FP ratios; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct BitsArgs {
    /// Comma-separated bit widths.
    #[arg(long, value_delimiter = ',', value_parser = parse_bits, default_value = "2,4")]
    pub bits: Vec<BitWidth>,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_bits, default_value = "2,4")]
    pub bits: Vec<BitWidth>,
    /// QAT steps after the FP init; defaults to the largest fine-tune budget.
    #[arg(long)]
    pub qat_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    #[arg(long)]
    pub n_weights: u64,
    #[arg(long)]
    pub wbits: f64,
    #[arg(long, default_value_t = 0)]
    pub n_embed: u64,
    #[arg(long, default_value_t = 16.0)]
    pub ebits: f64,
    /// Charge 1.58-bit weights 1.6 bits (five trits per byte).
    #[arg(long)]
    pub storage_honest: bool,
}

fn parse_bits(s: &str) -> std::result::Result<BitWidth, String> {
    s.parse::<BitWidth>().map_err(|e| e.to_string())
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 for usage
/// errors, 3 when training diverges and 1 for any other failure.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::NumericalDivergence { .. } => 3,
                _ => 1,
            }
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Quantize(a) => quantize(a, out),
        Command::Inspect { file } => inspect(file, out),
        Command::Bench(a) => bench(a, out),
        Command::Sweep(a) => sweep(cli, a, out),
        Command::Fts(a) => fts(cli, a, out),
        Command::Drift(a) => drift(cli, a, out),
        Command::Pareto { input } => {
            let (points, source) = analysis::read_points(File::open(input)?)?;
            let front = pareto_front(&points)?;
            analysis::write_front(out, &front, source)
        }
        Command::Size(a) => {
            let ternary = if a.storage_honest {
                TernaryAccounting::StorageHonest
            } else {
                TernaryAccounting::Analytic
            };
            let spec = SizeSpec::new(a.n_weights, a.wbits, a.n_embed, a.ebits)?.with_ternary(ternary);
            writeln!(out, "{}", effective_size(&spec))?;
            Ok(())
        }
    }
}

fn quantize(a: &QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    let w = read_matrix_csv(File::open(&a.input)?)?;
    let mut spec = QuantSpec::paretoq(a.bits);
    if a.per_tensor {
        spec = spec.with_granularity(Granularity::PerTensor);
    }
    let format = match (a.bits, a.ternary_as_2bit) {
        (BitWidth::Ternary, true) => PackFormat::PackTernaryAs2Bit,
        (_, true) => return Err(Error::InvalidArgument("--ternary-as-2bit needs --bits 1.58".into())),
        (b, false) => PackFormat::for_bitwidth(b),
    };
    let scales = init_scale(&w, &spec)?;
    let q = paretoq_forward(&w, &scales, &spec)?;
    let packed = bitpack::encode(&q, &scales, format)?;
    let bytes = bitpack::write_packed(&packed);
    fs::write(&a.output, &bytes)?;
    writeln!(out, "rows,cols,format,payload_bytes,file_bytes")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        packed.rows(),
        packed.cols(),
        format,
        packed.payload().len(),
        bytes.len()
    )?;
    Ok(())
}

#[derive(Serialize)]
struct Inspection {
    format: &'static str,
    tag: u8,
    rows: usize,
    cols: usize,
    bits_per_weight: f64,
    scales: usize,
    payload_bytes: usize,
    file_bytes: usize,
    levels: Vec<LevelCount>,
}

#[derive(Serialize)]
struct LevelCount {
    code: usize,
    level: f32,
    count: u64,
}

fn inspect(file: &Path, out: &mut dyn Write) -> Result<()> {
    let bytes = fs::read(file)?;
    let p = bitpack::read_packed(&bytes)?;
    let hist = p.code_histogram();
    let levels = p
        .level_table()
        .into_iter()
        .enumerate()
        .map(|(code, level)| LevelCount {
            code,
            level,
            count: hist.get(code).copied().unwrap_or(0),
        })
        .collect();
    let report = Inspection {
        format: p.format().name(),
        tag: p.format().tag(),
        rows: p.rows(),
        cols: p.cols(),
        bits_per_weight: p.format().bits_per_weight(),
        scales: p.scales().len(),
        payload_bytes: p.payload().len(),
        file_bytes: bytes.len(),
        levels,
    };
    serde_json::to_writer_pretty(&mut *out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let formats = if a.format == "all" {
        PackFormat::ALL.to_vec()
    } else {
        vec![a.format.parse()?]
    };
    writeln!(out, "{}", BenchReport::CSV_HEADER)?;
    for f in formats {
        writeln!(out, "{}", run_bench(f, a.rows, a.cols, a.reps, a.threads)?.csv_row())?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.data_seed = s;
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (0..n).map(|i| s.wrapping_add(i)).collect();
    }
    Ok(cfg)
}

fn out_file(cli: &Cli, name: &str) -> Result<Option<BufWriter<File>>> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Some(BufWriter::new(File::create(dir.join(name))?)))
        }
        None => Ok(None),
    }
}

/// Writes `text` to stdout and, with `--out`, to `name` in that directory.
fn emit(cli: &Cli, name: &str, text: &str, out: &mut dyn Write) -> Result<()> {
    out.write_all(text.as_bytes())?;
    if let Some(mut f) = out_file(cli, name)? {
        f.write_all(text.as_bytes())?;
        f.flush()?;
    }
    Ok(())
}

fn write_lines(cli: &Cli, name: &str, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    if let Some(mut f) = out_file(cli, name)? {
        writeln!(f, "{header}")?;
        for r in rows {
            writeln!(f, "{r}")?;
        }
        f.flush()?;
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(b) = a.bits {
        cfg.bitwidth = b;
    }
    if let Some(t) = a.total_steps {
        cfg.total_steps = t;
    }
    if let Some(r) = &a.ratios {
        cfg.ratios = r.clone();
    }
    let result = qat::run_budget_sweep(&cfg, &cfg.spec())?;
    let mut text = format!("{}\n", qat::SweepResult::CSV_HEADER);
    for r in &result.rows {
        text += &format!("{},{},{},{},{}\n", r.ratio, r.seed, r.fp_steps, r.qat_steps, r.val_loss);
    }
    emit(cli, "sweep.csv", &text, out)?;
    write_lines(cli, "sweep_curves.csv", qat::CURVE_CSV_HEADER, result.curves.iter().map(|c| c.csv_row()))
}

fn fts(cli: &Cli, a: &BitsArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let result = qat::run_finetune_vs_scratch(&cfg, &a.bits)?;
    let mut text = format!("{}\n", qat::FtsResult::CSV_HEADER);
    for r in &result.rows {
        text += &format!(
            "{},{},{},{},{},{},{}\n",
            r.bitwidth, r.qat_steps, r.seed, r.finetuned, r.scratch, r.fp_baseline, r.drift
        );
    }
    emit(cli, "fts.csv", &text, out)?;
    write_lines(
        cli,
        "fts_curves.csv",
        qat::FtsCurvePoint::CSV_HEADER,
        result.curves.iter().map(|c| c.csv_row()),
    )
}

fn drift(cli: &Cli, a: &DriftArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let steps = a
        .qat_steps
        .or_else(|| cfg.fts_grid.iter().copied().max())
        .ok_or_else(|| Error::InvalidArgument("no --qat-steps and an empty fts_grid".into()))?;
    let rows = qat::run_drift(&cfg, &a.bits, steps)?;
    let mut text = format!("{}\n", qat::DriftRow::CSV_HEADER);
    for r in &rows {
        for (layer, d) in r.per_layer.iter().enumerate() {
            text += &format!("{},{},{},{layer},{d}\n", r.bitwidth, r.seed, r.qat_steps);
        }
        text += &format!("{},{},{},mean,{}\n", r.bitwidth, r.seed, r.qat_steps, r.mean);
    }
    emit(cli, "drift.csv", &text, out)
}
