//! Approximate Newton's method for linear-quadratic stochastic optimal
//! control with the shared-sparsity penalty.
//!
//! Each Newton iteration freezes the penalty curvature in a diagonal `D`
//! computed from the previous control iterate. The Newton update is written
//! as a linear equation on the next iterate directly; after cancelling the
//! quadrature weight matrix, the right-hand side collapses sample-wise to
//! `(y_d, 0, -f)`, so every parameter sample decouples into an independent
//! deterministic saddle-point (KKT) system:
//!
//! ```text
//! [ M_y        0              -A(xi)^T ] [y]   [ y_d(xi) ]
//! [ 0          a M_u + diag(D)  B^T    ] [u] = [ 0       ]
//! [ -A(xi)     B                0      ] [l]   [ -f(xi)  ]
//! ```
//!
//! The TT backend reconstructs the next iterate in one shot by block
//! TT-Cross over these sample solves; the Monte Carlo backend runs the same
//! iteration with uniform weights `1/N` and dense per-sample storage.
//!
//! The KKT systems are solved by interleaving the unknowns `(y_i, u_i, l_i)`
//! per spatial node, which makes the matrix symmetric banded with definite
//! leading pivots, so an unpivoted banded LDL^T factorization applies. Within
//! one Newton iteration the matrix often depends on only part of `xi` (for
//! the elliptic benchmarks, only on `xi_1`), so factorizations are cached per
//! matrix key and shared across all samples of the iteration.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cross::{block_cross, CrossOptions};
use crate::error::{Error, Result};
use crate::linalg::{BandLdlt, BandMatrix, SpMat};
use crate::penalty::SmoothedPenalty;
use crate::quadrature::GaussGrid;
use crate::tt::BlockTensorTrain;

/// Per-sample operators of the constraint `A(xi) y = B u + f(xi)` and the
/// tracking target.
pub struct SampleOps {
    pub a: SpMat,
    pub b: SpMat,
    /// Load vector (boundary data already eliminated into it).
    pub f: Vec<f64>,
    /// Desired-state load vector (mass-weighted).
    pub y_d: Vec<f64>,
}

/// Linear-quadratic control problem under uncertainty.
pub struct LQProblem {
    /// Number of spatial degrees of freedom per field.
    pub nhat: usize,
    /// State mass matrix (positive semi-definite).
    pub m_y: SpMat,
    /// Control mass matrix (positive definite).
    pub m_u: SpMat,
    /// Tikhonov weight, > 0.
    pub alpha: f64,
    /// Spatial quadrature weights for the penalty.
    pub what: Vec<f64>,
    /// Operator callback at a parameter point.
    pub ops: Box<dyn Fn(&[f64]) -> SampleOps + Sync + Send>,
    /// Samples mapping to the same key share the same `(A, B)` pair, so the
    /// KKT factorization is reused. `None` disables the cache.
    pub matrix_key: Option<Box<dyn Fn(&[f64]) -> u64 + Sync + Send>>,
}

/// Result of the TT-backend Newton iteration.
pub struct NewtonState {
    /// Stacked solution `[y; u; lambda]` over the concatenated spatial index
    /// of size `3 nhat`, as a block TT with the block core at position 0.
    pub tt: BlockTensorTrain,
    pub iterations: usize,
    pub converged: bool,
    /// Last relative increment `|s_new - s_old| / |s_new|`.
    pub increment: f64,
    /// Cumulative number of KKT solves.
    pub pde_solves: usize,
    pub log: Vec<IterRecord>,
}

/// One Newton iteration record for the CSV log.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    pub increment: f64,
    pub max_rank: usize,
    pub pde_solves: usize,
    pub wall_secs: f64,
}

impl NewtonState {
    /// The state component as a block TT over `nhat` spatial DOFs.
    pub fn y(&self, nhat: usize) -> BlockTensorTrain {
        self.tt.slice_spatial(0..nhat)
    }

    /// The control component.
    pub fn u(&self, nhat: usize) -> BlockTensorTrain {
        self.tt.slice_spatial(nhat..2 * nhat)
    }

    /// The adjoint component.
    pub fn lambda(&self, nhat: usize) -> BlockTensorTrain {
        self.tt.slice_spatial(2 * nhat..3 * nhat)
    }

    /// Write the iteration log as CSV.
    pub fn write_log_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "k,increment,max_tt_rank,pde_solves,wall_secs")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{:.15e},{},{},{:.3}",
                r.k, r.increment, r.max_rank, r.pde_solves, r.wall_secs
            )?;
        }
        Ok(())
    }
}

/// Options for [`newton_solve`].
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Relative-increment stopping tolerance.
    pub tol: f64,
    /// Maximum number of Newton iterations K.
    pub max_iter: usize,
    /// TT rounding / cross tolerance (delta_tt).
    pub delta_tt: f64,
    /// Cross sweep limit per Newton iteration.
    pub cross_sweeps: usize,
    /// Seed for cross fallback index draws.
    pub seed: u64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-5,
            max_iter: 10_000,
            delta_tt: 1e-5,
            cross_sweeps: 20,
            seed: 42,
        }
    }
}

/// Assemble the interleaved banded KKT matrix for one sample given the frozen
/// penalty diagonal `D`.
pub fn assemble_kkt(prob: &LQProblem, ops: &SampleOps, d: &[f64]) -> Result<BandMatrix> {
    let nhat = prob.nhat;
    if d.len() != nhat
        || ops.a.nrows != nhat
        || ops.b.nrows != nhat
        || prob.m_y.nrows != nhat
        || prob.m_u.nrows != nhat
    {
        return Err(Error::shape("KKT operator sizes do not match nhat"));
    }
    let band_of = |m: &SpMat, off: i64| -> usize {
        m.triplets
            .iter()
            .map(|&(i, j, _)| (3 * (i as i64 - j as i64) + off).unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    };
    let hbw = band_of(&prob.m_y, 0)
        .max(band_of(&prob.m_u, 0))
        .max(band_of(&ops.a, 2))
        .max(band_of(&ops.b, 1));
    let mut kkt = BandMatrix::zeros(3 * nhat, hbw);
    // Symmetric blocks: insert the lower triangle only.
    for &(i, j, v) in &prob.m_y.triplets {
        if i >= j {
            kkt.add(3 * i, 3 * j, v);
        }
    }
    for &(i, j, v) in &prob.m_u.triplets {
        if i >= j {
            kkt.add(3 * i + 1, 3 * j + 1, prob.alpha * v);
        }
    }
    for (i, &di) in d.iter().enumerate() {
        kkt.add(3 * i + 1, 3 * i + 1, di);
    }
    // Off-diagonal blocks appear once per symmetric pair: the lambda-row
    // entries (-A y + B u) mirror the y-row -A^T and u-row B^T entries.
    for &(i, j, v) in &ops.a.triplets {
        kkt.add(3 * i + 2, 3 * j, -v);
    }
    for &(i, j, v) in &ops.b.triplets {
        kkt.add(3 * i + 2, 3 * j + 1, v);
    }
    Ok(kkt)
}

/// Factorized KKT system, reusable across samples sharing the same matrix.
pub struct KktFactor {
    nhat: usize,
    fact: BandLdlt,
}

impl KktFactor {
    pub fn new(prob: &LQProblem, ops: &SampleOps, d: &[f64]) -> Result<Self> {
        let kkt = assemble_kkt(prob, ops, d)?;
        let fact = kkt.ldlt().map_err(|e| {
            Error::DegenerateOperator(format!("KKT factorization failed: {e}"))
        })?;
        Ok(KktFactor {
            nhat: prob.nhat,
            fact,
        })
    }

    /// Solve for the right-hand side `(y_d, 0, -f)` of the given sample.
    pub fn solve(&self, ops: &SampleOps) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nhat = self.nhat;
        let mut rhs = vec![0.0; 3 * nhat];
        for i in 0..nhat {
            rhs[3 * i] = ops.y_d[i];
            rhs[3 * i + 2] = -ops.f[i];
        }
        self.fact.solve_in_place(&mut rhs);
        let mut y = vec![0.0; nhat];
        let mut u = vec![0.0; nhat];
        let mut l = vec![0.0; nhat];
        for i in 0..nhat {
            y[i] = rhs[3 * i];
            u[i] = rhs[3 * i + 1];
            l[i] = rhs[3 * i + 2];
        }
        (y, u, l)
    }
}

/// One-off per-sample KKT solve at parameter point `xi` with penalty diagonal
/// `d` (assembles and factorizes; see [`KktFactor`] for reuse).
pub fn solve_sample_kkt(
    xi: &[f64],
    d: &[f64],
    prob: &LQProblem,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let ops = (prob.ops)(xi);
    let factor = KktFactor::new(prob, &ops, d)?;
    Ok(factor.solve(&ops))
}

/// Solve the KKT systems for a batch of parameter points, sharing
/// factorizations between samples with equal matrix keys and running the
/// backsolves in parallel. Returns stacked `[y; u; lambda]` vectors.
fn solve_batch(prob: &LQProblem, d: &[f64], points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let all_ops: Vec<SampleOps> = points.par_iter().map(|xi| (prob.ops)(xi)).collect();
    let factors: Vec<Arc<KktFactor>> = match &prob.matrix_key {
        None => all_ops
            .par_iter()
            .map(|ops| KktFactor::new(prob, ops, d).map(Arc::new))
            .collect::<Result<_>>()?,
        Some(keyf) => {
            let keys: Vec<u64> = points.iter().map(|xi| keyf(xi)).collect();
            let mut unique: HashMap<u64, usize> = HashMap::new();
            for (s, &k) in keys.iter().enumerate() {
                unique.entry(k).or_insert(s);
            }
            let entries: Vec<(u64, usize)> = unique.iter().map(|(&k, &s)| (k, s)).collect();
            let built: Vec<(u64, Arc<KktFactor>)> = entries
                .par_iter()
                .map(|&(k, s)| {
                    KktFactor::new(prob, &all_ops[s], d).map(|f| (k, Arc::new(f)))
                })
                .collect::<Result<_>>()?;
            let by_key: HashMap<u64, Arc<KktFactor>> = built.into_iter().collect();
            keys.iter().map(|k| by_key[k].clone()).collect()
        }
    };
    Ok(all_ops
        .par_iter()
        .zip(factors.par_iter())
        .map(|(ops, factor)| {
            let (y, u, l) = factor.solve(ops);
            let mut s = y;
            s.extend(u);
            s.extend(l);
            s
        })
        .collect())
}

/// Approximate Newton's method with the TT-Cross backend.
///
/// Each iteration freezes `D` from the current control (via the exact TT
/// second moments), then reconstructs the next stacked iterate by block
/// TT-Cross over the decoupled sample solves, warm-started from the current
/// iterate. Stops when the relative increment drops below `tol`; returns a
/// not-converged flag (not an error) if `max_iter` is exhausted.
pub fn newton_solve(
    prob: &LQProblem,
    pen: &SmoothedPenalty,
    grid: &GaussGrid,
    opts: &NewtonOptions,
) -> Result<NewtonState> {
    if opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::invalid("Newton tolerance and max_iter must be positive"));
    }
    if pen.eps <= 0.0 {
        return Err(Error::invalid("Newton iteration requires eps > 0"));
    }
    let nhat = prob.nhat;
    let dims: Vec<usize> = (0..grid.dim()).map(|k| grid.len(k)).collect();
    let mut s = BlockTensorTrain::spatial_constant(&vec![0.0; 3 * nhat], &dims);
    let mut state = NewtonState {
        tt: s.clone(),
        iterations: 0,
        converged: false,
        increment: f64::INFINITY,
        pde_solves: 0,
        log: Vec::new(),
    };
    let t0 = Instant::now();
    for k in 1..=opts.max_iter {
        let moments = s.slice_spatial(nhat..2 * nhat).second_moment_per_dof(grid)?;
        let d = pen.approx_hessian_diag_from_moments(&moments)?;
        let evaluator = |batch: &[Vec<usize>]| -> Result<Vec<Vec<f64>>> {
            let points: Vec<Vec<f64>> = batch.iter().map(|idx| grid.point(idx)).collect();
            solve_batch(prob, &d, &points)
        };
        let cross = block_cross(
            evaluator,
            &s,
            &CrossOptions {
                tol: opts.delta_tt,
                max_sweeps: opts.cross_sweeps,
                seed: opts.seed,
                swap_tol: 1.01,
            },
        )?;
        let s_new = cross.tt;
        state.pde_solves += cross.evaluations;
        let norm_new = s_new.norm();
        let diff = s_new.add(&s.scale(-1.0))?.round(opts.delta_tt)?.norm();
        let rel = if norm_new == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / norm_new
        };
        s = s_new;
        state.iterations = k;
        state.increment = rel;
        state.log.push(IterRecord {
            k,
            increment: rel,
            max_rank: s.max_rank(),
            pde_solves: state.pde_solves,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        if rel <= opts.tol {
            state.converged = true;
            break;
        }
    }
    state.tt = s;
    Ok(state)
}

/// Result of the Monte Carlo backend: dense per-sample solution matrices.
pub struct McSolution {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub increment: f64,
    pub pde_solves: usize,
}

/// The same Newton iteration with Monte Carlo weights `1/N` and dense
/// per-sample storage (columns indexed by sample).
pub fn mc_newton_solve(
    prob: &LQProblem,
    pen: &SmoothedPenalty,
    samples: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<McSolution> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("Monte Carlo solve needs at least one sample"));
    }
    if pen.w.len() != n || pen.w.iter().any(|&w| (w - 1.0 / n as f64).abs() > 1e-12) {
        return Err(Error::invalid("Monte Carlo penalty weights must all equal 1/N"));
    }
    let nhat = prob.nhat;
    let mut u = DMatrix::<f64>::zeros(nhat, n);
    let mut y = DMatrix::<f64>::zeros(nhat, n);
    let mut lambda = DMatrix::<f64>::zeros(nhat, n);
    let mut pde_solves = 0;
    let mut increment = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=max_iter {
        let d = pen.approx_hessian_diag(&u)?;
        let sols = solve_batch(prob, &d, samples)?;
        pde_solves += n;
        let mut norm2 = 0.0;
        let mut diff2 = 0.0;
        for (j, s) in sols.iter().enumerate() {
            for i in 0..nhat {
                let (ny, nu, nl) = (s[i], s[nhat + i], s[2 * nhat + i]);
                diff2 += (ny - y[(i, j)]).powi(2)
                    + (nu - u[(i, j)]).powi(2)
                    + (nl - lambda[(i, j)]).powi(2);
                norm2 += ny * ny + nu * nu + nl * nl;
                y[(i, j)] = ny;
                u[(i, j)] = nu;
                lambda[(i, j)] = nl;
            }
        }
        increment = if norm2 == 0.0 {
            if diff2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (diff2 / norm2).sqrt()
        };
        iterations = k;
        if increment <= tol {
            converged = true;
            break;
        }
    }
    Ok(McSolution {
        y,
        u,
        lambda,
        iterations,
        converged,
        increment,
        pde_solves,
    })
}
