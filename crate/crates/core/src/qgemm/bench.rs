use super::gemv_into;
use crate::bitpack::{PackFormat, PackedMatrix};
use crate::error::{Error, Result};
use crate::quant::ChannelScales;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

const WARMUP_CALLS: usize = 3;

/// Timing of repeated GEMV calls over one packed matrix.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub format: PackFormat,
    pub rows: usize,
    pub cols: usize,
    pub threads: usize,
    pub reps: usize,
    pub payload_bytes: usize,
    pub ns_per_call: f64,
    /// Payload bytes streamed per second: `payload_bytes · reps / elapsed`.
    pub bytes_per_second: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "format,rows,cols,threads,reps,ns_per_call,bytes_per_second";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.1},{:.1}",
            self.format, self.rows, self.cols, self.threads, self.reps, self.ns_per_call, self.bytes_per_second
        )
    }
}

/// Random valid payload for `format`, deterministic in `seed`.
pub(crate) fn random_packed(format: PackFormat, rows: usize, cols: usize, seed: u64) -> PackedMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row_bytes = format.row_bytes(cols);
    let mut payload = vec![0u8; rows * row_bytes];
    match format {
        PackFormat::PackTrit243 => payload.iter_mut().for_each(|b| *b = rng.random_range(0..243)),
        // code 3 is not a ternary level
        PackFormat::PackTernaryAs2Bit => payload.iter_mut().for_each(|b| {
            *b = (0..4).fold(0u8, |acc, j| acc | (rng.random_range(0..3u8) << (2 * j)))
        }),
        _ => rng.fill(payload.as_mut_slice()),
    }
    // clear padding so the payload is canonical
    let used_bits = match format {
        PackFormat::PackTrit243 => None,
        f => Some(cols * f.bits_per_weight() as usize % 8),
    };
    if let Some(tail) = used_bits.filter(|&t| t != 0) {
        for r in 0..rows {
            payload[(r + 1) * row_bytes - 1] &= (1u8 << tail) - 1;
        }
    }
    let scales: Vec<f32> = (0..rows).map(|_| rng.random_range(0.01f32..0.1)).collect();
    PackedMatrix::from_parts(
        format,
        rows,
        cols,
        payload,
        ChannelScales::new(scales).expect("positive scales"),
    )
    .expect("valid random payload")
}

/// Times `reps` GEMV calls over a seeded random matrix on a pool of `threads`
/// workers. Warm-up calls are excluded.
pub fn run_bench(format: PackFormat, rows: usize, cols: usize, reps: usize, threads: usize) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let threads = threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let p = random_packed(format, rows, cols, 0x5eed ^ format.tag() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe9c);
    let x: Vec<f32> = (0..cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut y = vec![0.0f32; rows];

    let elapsed = pool.install(|| {
        for _ in 0..WARMUP_CALLS {
            gemv_into(&p, &x, &mut y);
        }
        let start = Instant::now();
        for _ in 0..reps {
            gemv_into(&p, std::hint::black_box(&x), &mut y);
            std::hint::black_box(&y);
        }
        start.elapsed()
    });
    let secs = elapsed.as_secs_f64().max(1e-9);
    let payload_bytes = p.payload().len();
    Ok(BenchReport {
        format,
        rows,
        cols,
        threads,
        reps,
        payload_bytes,
        ns_per_call: secs * 1e9 / reps as f64,
        bytes_per_second: payload_bytes as f64 * reps as f64 / secs,
    })
}
