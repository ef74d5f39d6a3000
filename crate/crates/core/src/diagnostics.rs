//! Finite-difference gradient checks and solve-time measurements.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{cut_constraints, cut_objective, CutWeightField, GridGraph};
use crate::qp::KKTSystem;

pub const FD_STEP: f64 = 1e-5;
/// Smallest denominator in the relative error, so that coordinates with a
/// vanishing gradient are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;
pub const GRADCHECK_MAX_PIXELS: usize = 1024;
pub const BENCH_MAX_SIDE: usize = 128;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the backward pass of a random `H×W` cut program against central
/// differences of `l(z) = gᵀz` for `trials` random coordinates of `c`.
pub fn gradcheck(height: usize, width: usize, gamma: f64, trials: usize, seed: u64) -> Result<GradcheckReport> {
    if height * width > GRADCHECK_MAX_PIXELS {
        return Err(Error::TooLarge(format!(
            "gradcheck is limited to {GRADCHECK_MAX_PIXELS} pixels, got {height}x{width}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let g = GridGraph::new(height, width)?;
    let (a, b) = cut_constraints(&g);
    let kkt = KKTSystem::prepare(&a, gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = CutWeightField::from_fn(height, width, |_, _, _| rng.gen_range(0.0..2.0));
    let c = cut_objective(&g, &field)?;
    let weights: Vec<f64> = (0..a.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |c: &[f64]| -> Result<f64> {
        let z = kkt.forward(c, &b)?.z;
        Ok(z.iter().zip(&weights).map(|(x, y)| x * y).sum())
    };
    let analytic = kkt.backward(&weights)?;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let i = rng.gen_range(0..a.cols());
        let mut plus = c.clone();
        plus[i] += FD_STEP;
        let mut minus = c.clone();
        minus[i] -= FD_STEP;
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(fd, analytic[i]));
    }
    let tolerance = kkt.options().gradcheck_tol;
    Ok(GradcheckReport {
        height,
        width,
        gamma,
        trials,
        seed,
        step: FD_STEP,
        max_relative_error: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchEntry {
    pub side: usize,
    pub n: usize,
    pub l: usize,
    pub nnz_a: usize,
    pub nnz_factor: usize,
    pub dense_columns: usize,
    pub factor_seconds: f64,
    pub solve_seconds_median: f64,
    /// Bytes held by `A`, the factor and the low-rank correction.
    pub memory_estimate_bytes: usize,
}

/// Factors the `side×side` cut program once, then times `repeats` solves.
pub fn bench_size(side: usize, gamma: f64, repeats: usize) -> Result<BenchEntry> {
    if side == 0 || side > BENCH_MAX_SIDE {
        return Err(Error::InvalidArgument(format!("bench sides must be in 1..={BENCH_MAX_SIDE}, got {side}")));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let g = GridGraph::new(side, side)?;
    let (a, b) = cut_constraints(&g);
    let start = Instant::now();
    let kkt = KKTSystem::prepare(&a, gamma)?;
    let factor_seconds = start.elapsed().as_secs_f64();
    let c = cut_objective(&g, &CutWeightField::constant(side, side, 1.0))?;
    kkt.forward(&c, &b)?;
    let mut times: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            let sol = kkt.forward(&c, &b);
            let dt = t.elapsed().as_secs_f64();
            sol.map(|_| dt)
        })
        .collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    let (l, nnz_factor, dense) = (a.rows(), kkt.factor().nnz(), kkt.dense_columns().len());
    let word = std::mem::size_of::<f64>() + std::mem::size_of::<usize>();
    let memory_estimate_bytes = a.nnz() * word
        + (a.rows() + 1) * std::mem::size_of::<usize>()
        + kkt.factored_matrix().nnz() * word
        + nnz_factor * word
        + 2 * dense * l * std::mem::size_of::<f64>();
    Ok(BenchEntry {
        side,
        n: a.cols(),
        l,
        nnz_a: a.nnz(),
        nnz_factor,
        dense_columns: dense,
        factor_seconds,
        solve_seconds_median: times[repeats / 2],
        memory_estimate_bytes,
    })
}
