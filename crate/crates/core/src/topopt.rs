//! Robust MBB-beam topology optimization under uncertain Young's modulus.
//!
//! Element densities `u` on an `n_x x n_y` grid of unit quadrilaterals are
//! optimized to minimize `E[C] + kappa Std[C] + R_eps(u)`, where `C = f' y`
//! is the compliance of a plane-stress Q1 elasticity model, the Young's
//! modulus of the pure material carries a truncated Karhunen-Loeve random
//! field, and `R_eps` is the shared-sparsity penalty. A Helmholtz-type
//! density filter `u_tilde = (I + eta L)^{-1} u` regularizes the design.
//!
//! Each projected-gradient iteration approximates the next filtered iterate
//! directly in block TT format with a single TT-Cross sweep warm-started
//! from the previous iterate; the volume and box constraints are applied
//! pointwise in `xi` inside the cross evaluator.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cross::{block_cross, CrossOptions};
use crate::error::{Error, Result};
use crate::linalg::{BandLdlt, BandMatrix};
use crate::penalty::SmoothedPenalty;
use crate::quadrature::GaussGrid;
use crate::tt::BlockTensorTrain;

const POISSON: f64 = 0.3;

/// Truncated KLE of the Gaussian-covariance random field at the element
/// centers: eigenvalues (descending) and unit-norm piecewise-constant
/// eigenfunctions. Keeps the smallest `d` with 99% of the total variance.
///
/// For grids larger than `max_points` elements, the eigenproblem is solved
/// on a uniformly coarsened grid and the eigenfunctions are prolonged
/// piecewise-constantly (the correlation length is resolved already by the
/// coarse grid, so the truncation dimension is unaffected).
pub fn kle_build(
    nx: usize,
    ny: usize,
    correlation_length: f64,
    variance_tol: f64,
    max_points: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if nx == 0 || ny == 0 || correlation_length <= 0.0 {
        return Err(Error::invalid("KLE needs a nonempty grid and positive length"));
    }
    let mut s = 1usize;
    while (nx / s) * (ny / s) > max_points {
        s *= 2;
        if nx % s != 0 || ny % s != 0 {
            return Err(Error::invalid(
                "element counts must be divisible by the KLE coarsening factor",
            ));
        }
    }
    let (cx, cy) = (nx / s, ny / s);
    let np = cx * cy;
    let centers: Vec<(f64, f64)> = (0..np)
        .map(|p| {
            let (bx, by) = (p / cy, p % cy);
            ((bx as f64 + 0.5) * s as f64, (by as f64 + 0.5) * s as f64)
        })
        .collect();
    let l2 = 2.0 * correlation_length * correlation_length;
    let cov = DMatrix::from_fn(np, np, |i, j| {
        let (dx, dy) = (centers[i].0 - centers[j].0, centers[i].1 - centers[j].1);
        (-(dx * dx + dy * dy) / l2).exp()
    });
    let eig = cov.symmetric_eigen();
    let mut pairs: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        // discretization round-off can produce tiny negative eigenvalues
        .map(|(i, &l)| (l.max(0.0), i))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let trace: f64 = pairs.iter().map(|p| p.0).sum();
    let mut kept = 0.0;
    let mut d = 0;
    while kept < (1.0 - variance_tol) * trace && d < np {
        kept += pairs[d].0;
        d += 1;
    }
    let scale = (s * s) as f64;
    let mut lambda = Vec::with_capacity(d);
    let mut phi = Vec::with_capacity(d);
    for &(l, col) in pairs.iter().take(d) {
        lambda.push(l * scale);
        // prolong to the fine grid and renormalize to unit 2-norm
        let v = eig.eigenvectors.column(col);
        let mut f = vec![0.0; nx * ny];
        for e in 0..nx * ny {
            let (ex, ey) = (e / ny, e % ny);
            f[e] = v[(ex / s) * cy + ey / s];
        }
        let nrm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in f.iter_mut() {
            *x /= nrm;
        }
        phi.push(f);
    }
    Ok((lambda, phi))
}

/// Unit-modulus element stiffness of a bilinear quadrilateral, plane
/// stress, unit thickness and size, via 2x2 Gauss quadrature. DOF order is
/// (ux, uy) at the corners (0,0), (1,0), (1,1), (0,1).
fn unit_ke(nu: f64) -> [[f64; 8]; 8] {
    let d00 = 1.0 / (1.0 - nu * nu);
    let d01 = nu * d00;
    let d22 = 0.5 * (1.0 - nu) * d00;
    let g = 0.5 / 3f64.sqrt();
    let mut ke = [[0.0; 8]; 8];
    for &a in &[0.5 - g, 0.5 + g] {
        for &b in &[0.5 - g, 0.5 + g] {
            let dndx = [-(1.0 - b), 1.0 - b, b, -b];
            let dndy = [-(1.0 - a), -a, a, 1.0 - a];
            for i in 0..4 {
                for j in 0..4 {
                    ke[2 * i][2 * j] += 0.25 * (d00 * dndx[i] * dndx[j] + d22 * dndy[i] * dndy[j]);
                    ke[2 * i][2 * j + 1] +=
                        0.25 * (d01 * dndx[i] * dndy[j] + d22 * dndy[i] * dndx[j]);
                    ke[2 * i + 1][2 * j] +=
                        0.25 * (d01 * dndy[i] * dndx[j] + d22 * dndx[i] * dndy[j]);
                    ke[2 * i + 1][2 * j + 1] +=
                        0.25 * (d00 * dndy[i] * dndy[j] + d22 * dndx[i] * dndx[j]);
                }
            }
        }
    }
    ke
}

/// The MBB problem data: geometry, elasticity, random field, filter.
pub struct TopOptProblem {
    pub nx: usize,
    pub ny: usize,
    /// Volume fraction target.
    pub vbar: f64,
    /// Filter strength.
    pub eta: f64,
    pub e0: f64,
    pub e_min: f64,
    /// KLE eigenvalues, descending.
    pub lambda: Vec<f64>,
    /// KLE eigenfunctions, one vector of element values per eigenvalue.
    pub phi: Vec<Vec<f64>>,
    ke: [[f64; 8]; 8],
    /// Element -> 8 global DOF indices.
    edof: Vec<[usize; 8]>,
    /// Global DOF -> free-DOF index (fixed DOFs are None).
    free: Vec<Option<usize>>,
    n_free: usize,
    elast_hbw: usize,
    /// Free-DOF index of the loaded (downward) DOF.
    load_dof: usize,
    /// Factorized filter operator I + eta L.
    filter_fact: BandLdlt,
    /// Graph Laplacian of the element grid, lower band.
    filter_band: BandMatrix,
}

impl TopOptProblem {
    /// Build the MBB problem: `nx = 4 ny`, unit elements, simply supported
    /// at the bottom corners (pin left, vertical roller right), unit
    /// downward load at the top center node.
    pub fn new(ny: usize, vbar: f64, eta: f64) -> Result<Self> {
        let nx = 4 * ny;
        if ny < 2 || !(0.0..1.0).contains(&vbar) || vbar <= 0.0 || eta < 0.0 {
            return Err(Error::invalid("need ny >= 2, vbar in (0,1), eta >= 0"));
        }
        let (lambda, phi) = kle_build(nx, ny, ny as f64, 0.01, 2500)?;
        Self::with_kle(ny, vbar, eta, lambda, phi)
    }

    /// As [`TopOptProblem::new`] with a precomputed KLE (lets several runs
    /// share one eigendecomposition).
    pub fn with_kle(
        ny: usize,
        vbar: f64,
        eta: f64,
        lambda: Vec<f64>,
        phi: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let nx = 4 * ny;
        let nel = nx * ny;
        if lambda.len() != phi.len() || phi.iter().any(|f| f.len() != nel) {
            return Err(Error::shape("KLE data does not match the element grid"));
        }
        let node = |ix: usize, iy: usize| ix * (ny + 1) + iy;
        let ndof = 2 * (nx + 1) * (ny + 1);
        let mut fixed = vec![false; ndof];
        // Simply supported beam: pin the bottom-left corner, constrain only
        // the vertical motion of the bottom-right corner. Fixing both corner
        // DOFs would let the optimizer exploit arch action and converge to a
        // much stiffer (and qualitatively different) design.
        fixed[2 * node(0, 0)] = true;
        fixed[2 * node(0, 0) + 1] = true;
        fixed[2 * node(nx, 0) + 1] = true;
        let mut free = vec![None; ndof];
        let mut n_free = 0;
        for (dof, fx) in fixed.iter().enumerate() {
            if !fx {
                free[dof] = Some(n_free);
                n_free += 1;
            }
        }
        let mut edof = Vec::with_capacity(nel);
        for e in 0..nel {
            let (ex, ey) = (e / ny, e % ny);
            let ns = [
                node(ex, ey),
                node(ex + 1, ey),
                node(ex + 1, ey + 1),
                node(ex, ey + 1),
            ];
            let mut ed = [0usize; 8];
            for (c, &n) in ns.iter().enumerate() {
                ed[2 * c] = 2 * n;
                ed[2 * c + 1] = 2 * n + 1;
            }
            edof.push(ed);
        }
        let elast_hbw = edof
            .iter()
            .flat_map(|ed| {
                let f: Vec<usize> = ed.iter().filter_map(|&d| free[d]).collect();
                let (lo, hi) = (
                    f.iter().copied().min().unwrap_or(0),
                    f.iter().copied().max().unwrap_or(0),
                );
                std::iter::once(hi - lo)
            })
            .max()
            .unwrap();
        let load_dof = free[2 * node(nx / 2, ny) + 1]
            .ok_or_else(|| Error::invalid("load node is fixed"))?;

        // filter operator I + eta * L on the element grid
        let mut band = BandMatrix::zeros(nel, ny);
        for e in 0..nel {
            let (ex, ey) = (e / ny, e % ny);
            let mut deg = 0.0;
            if ey + 1 < ny {
                band.add(e + 1, e, -eta);
                deg += 1.0;
            }
            if ey > 0 {
                deg += 1.0;
            }
            if ex + 1 < nx {
                band.add(e + ny, e, -eta);
                deg += 1.0;
            }
            if ex > 0 {
                deg += 1.0;
            }
            band.add(e, e, 1.0 + eta * deg);
        }
        let filter_fact = band
            .ldlt()
            .map_err(|e| Error::DegenerateOperator(format!("filter factorization: {e}")))?;

        Ok(TopOptProblem {
            nx,
            ny,
            vbar,
            eta,
            e0: 1.0,
            e_min: 1e-9,
            lambda,
            phi,
            ke: unit_ke(POISSON),
            edof,
            free,
            n_free,
            elast_hbw,
            load_dof,
            filter_fact,
            filter_band: band,
        })
    }

    pub fn nel(&self) -> usize {
        self.nx * self.ny
    }

    /// Random-field dimension.
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Apply the filter: `(I + eta L)^{-1} u`.
    pub fn filter_solve(&self, u: &[f64]) -> Vec<f64> {
        let mut v = u.to_vec();
        self.filter_fact.solve_in_place(&mut v);
        v
    }

    /// Apply the inverse filter map: `(I + eta L) u_tilde`.
    pub fn filter_apply(&self, ut: &[f64]) -> Vec<f64> {
        self.filter_band.matvec(ut)
    }

    /// The `E0 - E_min + 0.02 sum_k sqrt(lambda_k) phi_k(x) xi_k` multiplier
    /// of `u_tilde^3` in the net Young's modulus.
    pub fn modulus_field(&self, xi: &[f64]) -> Vec<f64> {
        let mut m = vec![self.e0 - self.e_min; self.nel()];
        for (k, f) in self.phi.iter().enumerate() {
            let c = 0.02 * self.lambda[k].sqrt() * xi[k];
            for (me, fe) in m.iter_mut().zip(f) {
                *me += c * fe;
            }
        }
        m
    }

    fn solve_elasticity(&self, e_mod: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut k = BandMatrix::zeros(self.n_free, self.elast_hbw);
        for (e, ed) in self.edof.iter().enumerate() {
            for (a, &da) in ed.iter().enumerate() {
                let Some(ra) = self.free[da] else { continue };
                for (b, &db) in ed.iter().enumerate() {
                    if let Some(rb) = self.free[db] {
                        if ra >= rb {
                            k.add(ra, rb, e_mod[e] * self.ke[a][b]);
                        }
                    }
                }
            }
        }
        let fact = k
            .ldlt()
            .map_err(|e| Error::DegenerateOperator(format!("stiffness singular: {e}")))?;
        let mut y = vec![0.0; self.n_free];
        y[self.load_dof] = -1.0;
        fact.solve_in_place(&mut y);
        let c = -y[self.load_dof];
        Ok((y, c))
    }

    /// Compliance `C = f' y` and its gradient with respect to the filtered
    /// densities at one parameter sample.
    pub fn compliance_and_gradient(&self, ut: &[f64], xi: &[f64]) -> Result<(f64, Vec<f64>)> {
        if ut.len() != self.nel() || xi.len() != self.dim() {
            return Err(Error::shape("density or parameter vector has wrong length"));
        }
        let mult = self.modulus_field(xi);
        let uc: Vec<f64> = ut.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let e_mod: Vec<f64> = uc
            .iter()
            .zip(&mult)
            .map(|(u, m)| self.e_min + u * u * u * m)
            .collect();
        let (y, c) = self.solve_elasticity(&e_mod)?;
        let mut g = vec![0.0; self.nel()];
        for (e, ed) in self.edof.iter().enumerate() {
            let ye: Vec<f64> = ed
                .iter()
                .map(|&d| self.free[d].map_or(0.0, |r| y[r]))
                .collect();
            let mut q = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    q += ye[a] * self.ke[a][b] * ye[b];
                }
            }
            g[e] = -3.0 * uc[e] * uc[e] * mult[e] * q;
        }
        Ok((c, g))
    }
}

/// Volume shift to mean `vbar` followed by a pointwise clamp to [0, 1].
pub fn project_constraints(u: &[f64], vbar: f64) -> Vec<f64> {
    let c = vbar - u.iter().sum::<f64>() / u.len() as f64;
    u.iter().map(|v| (v + c).clamp(0.0, 1.0)).collect()
}

/// Lagged compliance statistics used to scale the Std-penalty gradient.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveStats {
    pub mean_c: f64,
    pub std_c: f64,
}

/// Per-sample gradient of the penalized objective with respect to the
/// unfiltered density, `grad C * (1 + kappa (C - E[C]) / Std[C]) + grad R`,
/// with the compliance gradient pulled through the (symmetric) filter.
/// Returns the sample compliance as well. The Std factor is skipped when
/// `Std[C] = 0`.
pub fn objective_sample_gradient(
    prob: &TopOptProblem,
    ut: &[f64],
    u: &[f64],
    xi: &[f64],
    kappa: f64,
    stats: &ObjectiveStats,
    pen_diag: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (c, gt) = prob.compliance_and_gradient(ut, xi)?;
    let mut g = prob.filter_solve(&gt);
    let scale = if kappa > 0.0 && stats.std_c > 0.0 {
        1.0 + kappa * (c - stats.mean_c) / stats.std_c
    } else {
        1.0
    };
    for (ge, (ue, de)) in g.iter_mut().zip(u.iter().zip(pen_diag)) {
        *ge = scale * *ge + de * ue;
    }
    Ok((c, g))
}

/// Settings of [`run_topopt`].
#[derive(Debug, Clone)]
pub struct TopOptOptions {
    pub iterations: usize,
    /// Gradient step size.
    pub tau: f64,
    /// Target Std-penalty weight; continuation starts at 0.
    pub kappa: f64,
    /// Continuation increment per iteration.
    pub kappa_step: f64,
    /// Shared-sparsity weight.
    pub beta: f64,
    /// Penalty smoothing parameter.
    pub eps: f64,
    /// TT truncation threshold inside the cross sweep.
    pub delta_tt: f64,
    /// Gauss points per random variable.
    pub n: usize,
    pub seed: u64,
    /// Monte Carlo samples for the per-iteration compliance statistics.
    pub stats_samples: usize,
}

impl Default for TopOptOptions {
    fn default() -> Self {
        TopOptOptions {
            iterations: 5000,
            tau: 3e-3,
            kappa: 0.0,
            kappa_step: 2e-3,
            beta: 0.0,
            eps: 1e-3,
            delta_tt: 1e-2,
            n: 3,
            seed: 42,
            stats_samples: 32,
        }
    }
}

/// One iteration record of the optimization history.
#[derive(Debug, Clone)]
pub struct TopIterRecord {
    pub iter: usize,
    pub max_rank: usize,
    pub mean_rank: f64,
    pub mean_c: f64,
    pub std_c: f64,
    /// Relative volume error of the mean density.
    pub vol_err: f64,
}

/// Optimization history plus the rank metric `<r>` (mean of the internal TT
/// ranks over cores and iterations).
pub struct TopOptHistory {
    pub records: Vec<TopIterRecord>,
    pub mean_rank: f64,
}

impl TopOptHistory {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "iter,max_rank,mean_rank,mean_c,std_c,vol_err")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.15e},{:.15e},{:.15e},{:.15e}",
                r.iter, r.max_rank, r.mean_rank, r.mean_c, r.std_c, r.vol_err
            )?;
        }
        Ok(())
    }
}

fn internal_mean_rank(tt: &BlockTensorTrain) -> f64 {
    let r = tt.ranks();
    let inner = &r[1..r.len() - 1];
    inner.iter().sum::<usize>() as f64 / inner.len() as f64
}

/// Compliance statistics of the current design at seeded Monte Carlo
/// parameter samples.
fn mc_compliance_stats(
    prob: &TopOptProblem,
    tt: &BlockTensorTrain,
    grid: &GaussGrid,
    nsamples: usize,
    seed: u64,
) -> Result<ObjectiveStats> {
    let d = prob.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..nsamples)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let cs: Vec<f64> = samples
        .par_iter()
        .map(|xi| {
            let ut = tt.ftt_eval(grid, xi)?;
            Ok(prob.compliance_and_gradient(&ut, xi)?.0)
        })
        .collect::<Result<_>>()?;
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let var = cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / cs.len() as f64;
    Ok(ObjectiveStats {
        mean_c: mean,
        std_c: var.sqrt(),
    })
}

/// Exact tensor-grid quadrature of mean and std of the compliance; O(n^d)
/// deterministic solves, intended for final reporting.
pub fn compliance_stats_full_grid(
    prob: &TopOptProblem,
    tt: &BlockTensorTrain,
    grid: &GaussGrid,
) -> Result<(f64, f64)> {
    let d = grid.dim();
    let total: usize = (0..d).map(|k| grid.len(k)).product();
    let results: Vec<(f64, f64, f64)> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; d];
            let mut rest = flat;
            for k in (0..d).rev() {
                idx[k] = rest % grid.len(k);
                rest /= grid.len(k);
            }
            let w = grid.weight(&idx);
            let ut = tt.eval_spatial(&idx)?;
            let xi = grid.point(&idx);
            let c = prob.compliance_and_gradient(&ut, &xi)?.0;
            Ok((w, w * c, w * c * c))
        })
        .collect::<Result<_>>()?;
    let (mut wsum, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (w, wc, wcc) in results {
        wsum += w;
        m1 += wc;
        m2 += wcc;
    }
    let mean = m1 / wsum;
    Ok((mean, (m2 / wsum - mean * mean).max(0.0).sqrt()))
}

/// Run the projected gradient descent with one warm-started TT-Cross sweep
/// per iteration. Returns the final filtered density TT and the history.
pub fn run_topopt(
    prob: &TopOptProblem,
    opts: &TopOptOptions,
) -> Result<(BlockTensorTrain, TopOptHistory)> {
    if opts.tau <= 0.0 || opts.iterations == 0 {
        return Err(Error::invalid("need tau > 0 and at least one iteration"));
    }
    let nel = prob.nel();
    let d = prob.dim();
    let grid = GaussGrid::uniform(d, opts.n)?;
    let dims: Vec<usize> = vec![opts.n; d];
    let pen = SmoothedPenalty::new(opts.beta, opts.eps, vec![1.0; nel], vec![1.0])?;
    let mut tt = BlockTensorTrain::spatial_constant(&vec![prob.vbar; nel], &dims);
    let mut records = Vec::with_capacity(opts.iterations);
    let mut rank_accum = 0.0;
    for it in 0..opts.iterations {
        let kappa = opts.kappa.min(it as f64 * opts.kappa_step);
        let u_tt = tt.map_spatial(nel, |ut| prob.filter_apply(ut));
        let moments = u_tt.second_moment_per_dof(&grid)?;
        let pen_diag = pen.approx_hessian_diag_from_moments(&moments)?;
        let stats = mc_compliance_stats(prob, &tt, &grid, opts.stats_samples, opts.seed ^ 0x5bd1)?;
        let prev = tt.clone();
        let evaluator = |batch: &[Vec<usize>]| -> Result<Vec<Vec<f64>>> {
            batch
                .par_iter()
                .map(|idx| {
                    let xi = grid.point(idx);
                    let ut = prev.eval_spatial(idx)?;
                    let u = prob.filter_apply(&ut);
                    let (_, g) =
                        objective_sample_gradient(prob, &ut, &u, &xi, kappa, &stats, &pen_diag)?;
                    let stepped: Vec<f64> =
                        u.iter().zip(&g).map(|(ue, ge)| ue - opts.tau * ge).collect();
                    Ok(prob.filter_solve(&project_constraints(&stepped, prob.vbar)))
                })
                .collect()
        };
        let cross = block_cross(
            evaluator,
            &tt,
            &CrossOptions {
                tol: opts.delta_tt,
                max_sweeps: 1,
                seed: opts.seed,
                swap_tol: 1.01,
            },
        )?;
        tt = cross.tt;
        rank_accum += internal_mean_rank(&tt);

        let mean_u = tt.expectation(&grid)?;
        let vol = mean_u.iter().sum::<f64>() / nel as f64;
        records.push(TopIterRecord {
            iter: it + 1,
            max_rank: tt.max_rank(),
            mean_rank: internal_mean_rank(&tt),
            mean_c: stats.mean_c,
            std_c: stats.std_c,
            vol_err: (vol - prob.vbar).abs() / prob.vbar,
        });
    }
    let history = TopOptHistory {
        mean_rank: rank_accum / opts.iterations as f64,
        records,
    };
    Ok((tt, history))
}

/// Pointwise standard deviation of the thresholded material `1[u > 1/2]`,
/// estimated with seeded Monte Carlo samples, and its spatial average.
pub fn thresholded_std(
    tt: &BlockTensorTrain,
    grid: &GaussGrid,
    nsamples: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if nsamples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let d = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..nsamples)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let fields: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|xi| tt.ftt_eval(grid, xi))
        .collect::<Result<_>>()?;
    let nel = fields[0].len();
    let mut m1 = vec![0.0; nel];
    let mut m2 = vec![0.0; nel];
    for f in &fields {
        for (e, &v) in f.iter().enumerate() {
            let ind = if v > 0.5 { 1.0 } else { 0.0 };
            m1[e] += ind;
            m2[e] += ind;
        }
    }
    let n = nsamples as f64;
    let std: Vec<f64> = m1
        .iter()
        .zip(&m2)
        .map(|(a, b)| (b / n - (a / n) * (a / n)).max(0.0).sqrt())
        .collect();
    let avg = std.iter().sum::<f64>() / nel as f64;
    Ok((std, avg))
}

/// Write an element field as a plain-text matrix, `ny` rows by `nx`
/// columns, top row first.
pub fn write_density_matrix(
    field: &[f64],
    nx: usize,
    ny: usize,
    w: &mut impl Write,
) -> Result<()> {
    if field.len() != nx * ny {
        return Err(Error::shape("field length does not match the element grid"));
    }
    for iy in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|ix| format!("{:.15e}", field[ix * ny + iy]))
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
