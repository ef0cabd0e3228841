//! Elliptic control benchmarks on the unit interval and unit square.
//!
//! The constraint is `nu(xi) Laplace(y) = g(xi) + u` with
//! `nu(xi) = 10^(xi_1 - 2)` and `g = xi_2 / 100`, with parameter-dependent
//! Dirichlet data eliminated into the load vector. The 1D problem uses P1
//! elements with `d = 4` random variables (diffusion, source, two boundary
//! values); the 2D problem uses Q1 elements with `d = 6` (the four corner
//! values `b_1..b_4` are interpolated linearly along the edges).
//!
//! Besides the problem builders, this module hosts the post-processing
//! metrics: sparsity measure of the mean control, mean/std fields, expected
//! state misfit, and the low-rank certificate for the stacked solution.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{BandMatrix, SpMat};
use crate::lqsolver::{LQProblem, NewtonState, SampleOps};
use crate::quadrature::GaussGrid;
use crate::tt::BlockTensorTrain;

/// Configuration of an elliptic benchmark run.
#[derive(Debug, Clone)]
pub struct EllipticConfig {
    /// Physical dimension, 1 or 2.
    pub dimension: usize,
    /// Mesh size, must be 1/2^m.
    pub h: f64,
    /// Gauss-Legendre points per random variable.
    pub n: usize,
    /// Number of random variables: 4 (1D) or 6 (2D).
    pub d: usize,
    /// Tikhonov weight.
    pub alpha: f64,
    /// Shared-sparsity weight.
    pub beta: f64,
    /// Smoothing parameter.
    pub eps: f64,
    /// TT truncation / cross tolerance.
    pub delta_tt: f64,
    /// Newton stopping tolerance.
    pub tol: f64,
}

impl EllipticConfig {
    /// Benchmark defaults on the unit interval.
    pub fn default_1d() -> Self {
        EllipticConfig {
            dimension: 1,
            h: 1.0 / 1024.0,
            n: 17,
            d: 4,
            alpha: 1e-2,
            beta: 0.0,
            eps: 1e-5,
            delta_tt: 1e-5,
            tol: 1e-5,
        }
    }

    /// Benchmark defaults on the unit square.
    pub fn default_2d() -> Self {
        EllipticConfig {
            dimension: 2,
            h: 1.0 / 64.0,
            n: 9,
            d: 6,
            alpha: 1e-2,
            beta: 0.0,
            eps: 1e-5,
            delta_tt: 1e-5,
            tol: 1e-5,
        }
    }

    fn validate(&self, dimension: usize) -> Result<usize> {
        if self.dimension != dimension {
            return Err(Error::invalid("config dimension does not match builder"));
        }
        let inv = 1.0 / self.h;
        let m = inv.round() as usize;
        if !(inv.fract() == 0.0 && m >= 2 && m.is_power_of_two()) {
            return Err(Error::invalid("mesh size must be 1/2^m"));
        }
        let d_expect = if dimension == 1 { 4 } else { 6 };
        if self.d != d_expect {
            return Err(Error::invalid("d must be 4 in 1D and 6 in 2D"));
        }
        if self.n < 2 || self.alpha <= 0.0 {
            return Err(Error::invalid("need n >= 2 quadrature points and alpha > 0"));
        }
        Ok(m)
    }
}

/// Assembled benchmark problem plus the data needed for post-processing.
pub struct EllipticProblem {
    pub lq: LQProblem,
    pub cfg: EllipticConfig,
    /// Interior-node coordinates (one coordinate per row).
    pub coords: Vec<Vec<f64>>,
    /// Desired state sampled at the interior nodes.
    pub y_d_nodes: Vec<f64>,
    /// Full trapezoidal weights over the closed domain, with the boundary
    /// weight lumped in; sums to |D| = 1. Used by the sparsity measure,
    /// where the (zero) boundary control counts as sparse.
    pub w_sparsity_boundary: f64,
}

impl EllipticProblem {
    /// Tensor quadrature grid matching the configuration.
    pub fn grid(&self) -> GaussGrid {
        GaussGrid::uniform(self.cfg.d, self.cfg.n).expect("validated config")
    }

    /// Sparsity measure of the interior mean control over the whole domain,
    /// counting the homogeneous boundary control as sparse.
    pub fn sparsity_of_mean(&self, mean_u: &[f64], threshold: f64) -> f64 {
        sparsity_measure(mean_u, &self.lq.what, threshold) + self.w_sparsity_boundary
    }

    /// Solve the state equation `A(xi) y = B u + f(xi)` alone.
    pub fn state_solve(&self, xi: &[f64], u: Option<&[f64]>) -> Result<Vec<f64>> {
        let ops = (self.lq.ops)(xi);
        let mut rhs = ops.f.clone();
        if let Some(u) = u {
            let bu = ops.b.matvec(u);
            for (r, v) in rhs.iter_mut().zip(bu) {
                *r += v;
            }
        }
        // -A is symmetric positive definite and banded.
        let nhat = self.lq.nhat;
        let hbw = ops
            .a
            .triplets
            .iter()
            .map(|&(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0);
        let mut band = BandMatrix::zeros(nhat, hbw);
        for &(i, j, v) in &ops.a.triplets {
            if i >= j {
                band.add(i, j, -v);
            }
        }
        let fact = band
            .ldlt()
            .map_err(|e| Error::DegenerateOperator(format!("state operator singular: {e}")))?;
        for r in rhs.iter_mut() {
            *r = -*r;
        }
        fact.solve_in_place(&mut rhs);
        Ok(rhs)
    }
}

fn nu_of(xi: &[f64]) -> f64 {
    10f64.powf(xi[0] - 2.0)
}

fn g_of(xi: &[f64]) -> f64 {
    xi[1] / 100.0
}

/// Desired state; in 2D evaluated on the first coordinate.
fn y_d_fn(x1: f64) -> f64 {
    -(50.0 * x1 / std::f64::consts::PI).sin()
}

/// Build the 1D benchmark with P1 elements on a uniform grid of step `h`.
pub fn build_elliptic_1d(cfg: &EllipticConfig) -> Result<EllipticProblem> {
    let m = cfg.validate(1)?;
    let h = cfg.h;
    let nhat = m - 1;

    let mut k_ii = SpMat::new(nhat, nhat);
    let mut mass = SpMat::new(nhat, nhat);
    for i in 0..nhat {
        k_ii.push(i, i, 2.0 / h);
        mass.push(i, i, 4.0 * h / 6.0);
        if i + 1 < nhat {
            k_ii.push(i, i + 1, -1.0 / h);
            k_ii.push(i + 1, i, -1.0 / h);
            mass.push(i, i + 1, h / 6.0);
            mass.push(i + 1, i, h / 6.0);
        }
    }

    // Desired-state load over the closed grid (boundary values included).
    let y_d_full: Vec<f64> = (0..=m).map(|i| y_d_fn(i as f64 * h)).collect();
    let y_d_load: Vec<f64> = (1..m)
        .map(|i| h / 6.0 * (y_d_full[i - 1] + 4.0 * y_d_full[i] + y_d_full[i + 1]))
        .collect();
    let y_d_nodes: Vec<f64> = (1..m).map(|i| y_d_full[i]).collect();
    let coords: Vec<Vec<f64>> = (1..m).map(|i| vec![i as f64 * h]).collect();

    let k_base = k_ii.clone();
    let b_base = mass.clone();
    let lq = LQProblem {
        nhat,
        m_y: mass.clone(),
        m_u: mass,
        alpha: cfg.alpha,
        what: vec![h; nhat],
        ops: Box::new(move |xi: &[f64]| {
            let nu = nu_of(xi);
            let a = k_base.scale(-nu);
            let y_left = -1.0 - xi[2] / 1000.0;
            let y_right = -(2.0 + xi[3]) / 1000.0;
            // f = M g + nu * K_ib y_b (the K_ib entries are -1/h).
            let mut f = vec![g_of(xi) * h; nhat];
            f[0] -= nu * y_left / h;
            f[nhat - 1] -= nu * y_right / h;
            SampleOps {
                a,
                b: b_base.clone(),
                f,
                y_d: y_d_load.clone(),
            }
        }),
        matrix_key: Some(Box::new(|xi: &[f64]| xi[0].to_bits())),
    };

    Ok(EllipticProblem {
        lq,
        cfg: cfg.clone(),
        coords,
        y_d_nodes,
        w_sparsity_boundary: h,
    })
}

/// Build the 2D benchmark with Q1 elements on a uniform grid of the unit
/// square. Interior nodes are numbered `(ix-1) * (m-1) + (iy-1)`.
pub fn build_elliptic_2d(cfg: &EllipticConfig) -> Result<EllipticProblem> {
    let m = cfg.validate(2)?;
    let h = cfg.h;
    let ni = m - 1;
    let nhat = ni * ni;

    // Reference element matrices in node order (0,0), (1,0), (1,1), (0,1).
    let k_loc = [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ];
    let m_loc = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];

    let interior = |ix: usize, iy: usize| -> Option<usize> {
        if ix >= 1 && ix < m && iy >= 1 && iy < m {
            Some((ix - 1) * ni + (iy - 1))
        } else {
            None
        }
    };

    let mut k_ii = SpMat::new(nhat, nhat);
    let mut mass = SpMat::new(nhat, nhat);
    // Interior-to-boundary stiffness couplings: (interior row, boundary
    // (ix, iy), value).
    let mut k_ib: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut y_d_load = vec![0.0; nhat];
    for ex in 0..m {
        for ey in 0..m {
            let nodes = [(ex, ey), (ex + 1, ey), (ex + 1, ey + 1), (ex, ey + 1)];
            for (a, &(ax, ay)) in nodes.iter().enumerate() {
                let Some(row) = interior(ax, ay) else { continue };
                for (b, &(bx, by)) in nodes.iter().enumerate() {
                    let kv = k_loc[a][b] / 6.0;
                    let mv = m_loc[a][b] * h * h / 36.0;
                    match interior(bx, by) {
                        Some(col) => {
                            k_ii.push(row, col, kv);
                            mass.push(row, col, mv);
                        }
                        None => k_ib.push((row, bx, by, kv)),
                    }
                    y_d_load[row] += mv * y_d_fn(bx as f64 * h);
                }
            }
        }
    }

    let mut coords = Vec::with_capacity(nhat);
    let mut y_d_nodes = Vec::with_capacity(nhat);
    for ix in 1..m {
        for iy in 1..m {
            coords.push(vec![ix as f64 * h, iy as f64 * h]);
            y_d_nodes.push(y_d_fn(ix as f64 * h));
        }
    }

    let k_base = k_ii.clone();
    let b_base = mass.clone();
    let mm = m;
    let lq = LQProblem {
        nhat,
        m_y: mass.clone(),
        m_u: mass,
        alpha: cfg.alpha,
        what: vec![h * h; nhat],
        ops: Box::new(move |xi: &[f64]| {
            let nu = nu_of(xi);
            let a = k_base.scale(-nu);
            let b1 = -1.0 - xi[2] / 1000.0;
            let b2 = -(2.0 + xi[3]) / 1000.0;
            let b3 = -1.0 - xi[4] / 1000.0;
            let b4 = -(2.0 + xi[5]) / 1000.0;
            // Edge traces, consistent at the corners b1=(0,0), b2=(0,1),
            // b3=(1,1), b4=(1,0).
            let bc = |ix: usize, iy: usize| -> f64 {
                let (x1, x2) = (ix as f64 * h, iy as f64 * h);
                if ix == 0 {
                    b1 * (1.0 - x2) + b2 * x2
                } else if ix == mm {
                    b4 * (1.0 - x2) + b3 * x2
                } else if iy == 0 {
                    b1 * (1.0 - x1) + b4 * x1
                } else {
                    b2 * (1.0 - x1) + b3 * x1
                }
            };
            let mut f = vec![g_of(xi) * h * h; nhat];
            for &(row, bx, by, kv) in &k_ib {
                f[row] += nu * kv * bc(bx, by);
            }
            SampleOps {
                a,
                b: b_base.clone(),
                f,
                y_d: y_d_load.clone(),
            }
        }),
        matrix_key: Some(Box::new(|xi: &[f64]| xi[0].to_bits())),
    };

    Ok(EllipticProblem {
        lq,
        cfg: cfg.clone(),
        coords,
        y_d_nodes,
        // Closed-square trapezoid minus the interior h^2 cells.
        w_sparsity_boundary: 1.0 - (ni * ni) as f64 * h * h,
    })
}

/// Measure of the set where the mean control is below the threshold,
/// `sum_i w_i * 1[|mean_u_i| < threshold]`.
pub fn sparsity_measure(mean_u: &[f64], what: &[f64], threshold: f64) -> f64 {
    mean_u
        .iter()
        .zip(what)
        .filter(|(u, _)| u.abs() < threshold)
        .map(|(_, w)| w)
        .sum()
}

/// Pointwise mean and standard deviation of a block TT field, exact in TT.
pub fn control_statistics(u: &BlockTensorTrain, grid: &GaussGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean = u.expectation(grid)?;
    let m2 = u.second_moment_per_dof(grid)?;
    let std = mean
        .iter()
        .zip(&m2)
        .map(|(mu, m)| (m - mu * mu).max(0.0).sqrt())
        .collect();
    Ok((mean, std))
}

/// Expected squared `M_y`-norm of `y - y_d`, exact in TT.
pub fn misfit(
    y: &BlockTensorTrain,
    y_d_nodes: &[f64],
    m_y: &SpMat,
    grid: &GaussGrid,
) -> Result<f64> {
    let dims: Vec<usize> = (0..grid.dim()).map(|k| grid.len(k)).collect();
    let neg: Vec<f64> = y_d_nodes.iter().map(|v| -v).collect();
    let diff = y.add(&BlockTensorTrain::spatial_constant(&neg, &dims))?;
    diff.expected_quadratic_form(grid, &m_y.triplets)
}

/// True iff every TT rank of the final stacked solution is at most 7.
pub fn rank7_certificate(state: &NewtonState) -> bool {
    state.tt.max_rank() <= 7
}

/// Write the mean-control band plot data: columns x, mean, mean-std,
/// mean+std.
pub fn write_control_stats_csv(
    xs: &[f64],
    mean: &[f64],
    std: &[f64],
    w: &mut impl Write,
) -> Result<()> {
    writeln!(w, "x,mean,mean_minus_std,mean_plus_std")?;
    for i in 0..xs.len() {
        writeln!(
            w,
            "{:.15e},{:.15e},{:.15e},{:.15e}",
            xs[i],
            mean[i],
            mean[i] - std[i],
            mean[i] + std[i]
        )?;
    }
    Ok(())
}

/// Write a 2D nodal field as a plain-text row-major matrix.
pub fn write_field_matrix(field: &[f64], ncols: usize, w: &mut impl Write) -> Result<()> {
    if ncols == 0 || field.len() % ncols != 0 {
        return Err(Error::shape("field length is not a multiple of ncols"));
    }
    for row in field.chunks(ncols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.15e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}
