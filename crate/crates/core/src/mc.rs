//! Seeded Monte Carlo sampling and the TT-vs-MC comparison harness.
//!
//! The comparison runs the same approximate Newton iteration once with the
//! tensor-train backend (varying the stopping tolerance) and once with the
//! Monte Carlo backend (varying both the tolerance and the sample count),
//! and reports the mean-control error against a tight-tolerance TT reference
//! together with the exact number of deterministic KKT solves spent.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lqsolver::{mc_newton_solve, newton_solve, LQProblem, NewtonOptions};
use crate::penalty::SmoothedPenalty;
use crate::quadrature::GaussGrid;

/// A reproducible set of i.i.d. U(-1,1) parameter samples.
pub struct SampleSet {
    pub seed: u64,
    /// N samples of dimension d.
    pub samples: Vec<Vec<f64>>,
}

/// Draw `n` deterministic i.i.d. U(-1,1) samples in dimension `d`. ChaCha8
/// is counter-based, so the set is reproducible across platforms and runs.
pub fn draw_uniform(seed: u64, n: usize, d: usize) -> Result<SampleSet> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("sample count and dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    Ok(SampleSet { seed, samples })
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub method: String,
    pub tolerance: f64,
    /// Sample count (Monte Carlo) or tensor-grid size (TT).
    pub n_samples: usize,
    /// Exact number of deterministic KKT solves performed.
    pub n_pde: usize,
    /// Mean-control error against the reference.
    pub error: f64,
    pub wall_secs: f64,
}

/// Settings of [`compare_tt_mc`].
#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub beta: f64,
    pub eps: f64,
    /// TT truncation tolerance used by all TT runs.
    pub delta_tt: f64,
    /// Stopping tolerance of the TT reference solution.
    pub ref_tol: f64,
    /// Stopping tolerances for the TT runs.
    pub tt_tols: Vec<f64>,
    /// Stopping tolerances for the Monte Carlo runs.
    pub mc_tols: Vec<f64>,
    /// Monte Carlo sample counts, combined with every tolerance.
    pub sample_sizes: Vec<usize>,
    pub seed: u64,
    pub max_iter: usize,
}

/// Discrete L^2(D) norm with the spatial quadrature weights of the problem.
fn l2_error(what: &[f64], a: &[f64], b: &[f64]) -> f64 {
    what.iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Compare the TT and Monte Carlo backends on one problem. The reference
/// mean control is computed with the TT method at `ref_tol`; every row
/// reports the exact KKT-solve count of its run.
pub fn compare_tt_mc(
    prob: &LQProblem,
    grid: &GaussGrid,
    opts: &CompareOptions,
) -> Result<Vec<ComparisonRow>> {
    let nhat = prob.nhat;
    let pen_tt = SmoothedPenalty::new(opts.beta, opts.eps, prob.what.clone(), vec![1.0])?;
    let newton = |tol: f64| NewtonOptions {
        tol,
        max_iter: opts.max_iter,
        delta_tt: opts.delta_tt,
        seed: opts.seed,
        ..Default::default()
    };
    let reference = newton_solve(prob, &pen_tt, grid, &newton(opts.ref_tol))?;
    if !reference.converged {
        return Err(Error::SolverFailure(
            "TT reference run did not converge".into(),
        ));
    }
    let ref_mean = reference.u(nhat).expectation(grid)?;

    let grid_size: usize = (0..grid.dim()).map(|k| grid.len(k)).product();
    let mut rows = Vec::new();
    for &tol in &opts.tt_tols {
        let t = Instant::now();
        let state = newton_solve(prob, &pen_tt, grid, &newton(tol))?;
        let mean = state.u(nhat).expectation(grid)?;
        rows.push(ComparisonRow {
            method: "tt".into(),
            tolerance: tol,
            n_samples: grid_size,
            n_pde: state.pde_solves,
            error: l2_error(&prob.what, &mean, &ref_mean),
            wall_secs: t.elapsed().as_secs_f64(),
        });
    }
    for (run, &tol) in opts.mc_tols.iter().enumerate() {
        for (sz, &n) in opts.sample_sizes.iter().enumerate() {
            let t = Instant::now();
            let set = draw_uniform(
                opts.seed ^ ((run as u64) << 32) ^ (sz as u64 + 1),
                n,
                grid.dim(),
            )?;
            let pen_mc = SmoothedPenalty::new(
                opts.beta,
                opts.eps,
                prob.what.clone(),
                vec![1.0 / n as f64; n],
            )?;
            let mc = mc_newton_solve(prob, &pen_mc, &set.samples, tol, opts.max_iter)?;
            let mean: Vec<f64> = (0..nhat)
                .map(|i| (0..n).map(|j| mc.u[(i, j)]).sum::<f64>() / n as f64)
                .collect();
            rows.push(ComparisonRow {
                method: "mc".into(),
                tolerance: tol,
                n_samples: n,
                n_pde: mc.pde_solves,
                error: l2_error(&prob.what, &mean, &ref_mean),
                wall_secs: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Write the comparison table as CSV.
pub fn write_comparison_csv(rows: &[ComparisonRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "method,tolerance,n_samples,n_pde,error,wall_secs")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.15e},{},{},{:.15e},{:.3}",
            r.method, r.tolerance, r.n_samples, r.n_pde, r.error, r.wall_secs
        )?;
    }
    Ok(())
}
