//! Differentiable graph-cut partitioning on image grids.
//!
//! A minimum s-t cut on an `H×W` grid is relaxed into a regularized
//! equality-constrained QP whose solution and gradient come from one sparse
//! Cholesky factorization of `A·Aᵀ` ([`qp::KKTSystem`]). On top sit k-way
//! partition masks, slot pooling and slot matching ([`partition`]), a small
//! weight-fitting loop ([`learn`]), and exact reference solvers ([`oracles`]).

pub mod diagnostics;
pub mod error;
pub mod formats;
pub mod graph;
pub mod learn;
pub mod oracles;
pub mod partition;
pub mod qp;
pub mod segment;
pub mod sparse;

pub use error::{Error, Result};

/// Environment variable limiting the worker threads used for batched solves.
pub const THREADS_ENV: &str = "CUTLAYER_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] if it is set to a
/// positive integer. Has no effect once the pool exists.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
