//! Extremely low-bit (1 / 1.58 / 2 / 3 / 4-bit) weight quantization toolkit.
//!
//! - [`quant`]: quantizers, straight-through gradients and scale init.
//! - [`bitpack`]: packed storage codecs and the `PQPK` file format.
//! - [`qgemm`]: packed GEMV/GEMM kernels and a microbenchmark.
//! - [`autodiff`]: a small reverse-mode engine with a fake-quantized linear op.
//! - [`qat`]: toy-scale quantization-aware training experiments.
//! - [`analysis`]: effective model size and Pareto frontiers.
//! - [`cli`]: the `paretoq` command line.

pub mod analysis;
pub mod autodiff;
pub mod bitpack;
pub mod cli;
pub mod error;
pub mod matrix;
pub mod qat;
pub mod qgemm;
pub mod quant;

pub use error::{Error, Result};
pub use matrix::{read_matrix_csv, Matrix};
