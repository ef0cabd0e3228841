//! Smoothed shared-sparsity penalty, its derivatives, and the block-diagonal
//! approximate Hessian used by the Newton solver.
//!
//! For a control coefficient matrix `u` of shape `N_hat x N` (spatial DOF by
//! parameter sample), the penalty is
//!
//! ```text
//! R(u) = beta * sum_i what_i * sqrt( sum_j w_j u_{i,j}^2 + eps^2 )
//! ```
//!
//! i.e. a smoothed L1 norm over space of the weighted L2 norm over the random
//! parameter, which drives the control to a support shared across all
//! realizations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parameters of the smoothed shared-sparsity penalty.
#[derive(Debug, Clone)]
pub struct SmoothedPenalty {
    /// Regularization weight, >= 0.
    pub beta: f64,
    /// Smoothing parameter; > 0 for derivatives, >= 0 for evaluation.
    pub eps: f64,
    /// Spatial quadrature weights (one per DOF, all positive).
    pub what: Vec<f64>,
    /// Parameter quadrature weights (sum to one; 1/N in Monte Carlo mode).
    pub w: Vec<f64>,
}

impl SmoothedPenalty {
    pub fn new(beta: f64, eps: f64, what: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if beta < 0.0 || eps < 0.0 {
            return Err(Error::invalid("beta and eps must be nonnegative"));
        }
        if what.iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("spatial weights must be positive"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "parameter weights must sum to 1 (got {sum})"
            )));
        }
        Ok(SmoothedPenalty { beta, eps, what, w })
    }

    fn check_shape(&self, u: &DMatrix<f64>) -> Result<()> {
        if u.nrows() != self.what.len() || u.ncols() != self.w.len() {
            return Err(Error::invalid(format!(
                "coefficient matrix is {}x{}, expected {}x{}",
                u.nrows(),
                u.ncols(),
                self.what.len(),
                self.w.len()
            )));
        }
        Ok(())
    }

    /// Row-wise weighted second moments `m_i = sum_j w_j u_{i,j}^2`.
    pub fn row_moments(&self, u: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_shape(u)?;
        Ok((0..u.nrows())
            .map(|i| (0..u.ncols()).map(|j| self.w[j] * u[(i, j)] * u[(i, j)]).sum())
            .collect())
    }

    /// Smoothing denominators `s_i = sqrt(m_i + eps^2)`; errors at a
    /// nonsmooth point (`eps = 0` with a zero row).
    fn denominators(&self, moments: &[f64]) -> Result<Vec<f64>> {
        let s: Vec<f64> = moments.iter().map(|m| (m + self.eps * self.eps).sqrt()).collect();
        if s.iter().any(|&v| v == 0.0) {
            return Err(Error::NonsmoothPoint(
                "penalty derivative at eps = 0 with a vanishing control row".into(),
            ));
        }
        Ok(s)
    }

    /// The penalty value `R(u)`.
    pub fn value(&self, u: &DMatrix<f64>) -> Result<f64> {
        let m = self.row_moments(u)?;
        Ok(self.value_from_moments(&m))
    }

    /// Penalty value from precomputed row moments (TT mode: moments come from
    /// `second_moment_per_dof` without materializing the full matrix).
    pub fn value_from_moments(&self, moments: &[f64]) -> f64 {
        self.beta
            * moments
                .iter()
                .zip(&self.what)
                .map(|(m, wh)| wh * (m + self.eps * self.eps).sqrt())
                .sum::<f64>()
    }

    /// Entrywise gradient `(grad R)_{i,j} = beta what_i u_{i,j} w_j / s_i`.
    pub fn gradient(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.row_moments(u)?;
        let s = self.denominators(&m)?;
        Ok(DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| {
            self.beta * self.what[i] * u[(i, j)] * self.w[j] / s[i]
        }))
    }

    /// Gradient with the parameter weight `w_j` removed, as used after the
    /// weight matrix cancels in the Newton system.
    pub fn gradient_unweighted(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.row_moments(u)?;
        let s = self.denominators(&m)?;
        Ok(DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| {
            self.beta * self.what[i] * u[(i, j)] / s[i]
        }))
    }

    /// Exact Hessian applied to a direction `v`, both terms, in O(N_hat * N):
    ///
    /// ```text
    /// (H v)_{i,j} = beta what_i [ w_j v_{i,j} / s_i
    ///             - u_{i,j} w_j (sum_j' w_j' u_{i,j'} v_{i,j'}) / s_i^3 ]
    /// ```
    pub fn hessian_apply(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(v)?;
        let m = self.row_moments(u)?;
        let s = self.denominators(&m)?;
        let dots: Vec<f64> = (0..u.nrows())
            .map(|i| (0..u.ncols()).map(|j| self.w[j] * u[(i, j)] * v[(i, j)]).sum())
            .collect();
        Ok(DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| {
            self.beta
                * self.what[i]
                * (self.w[j] * v[(i, j)] / s[i]
                    - u[(i, j)] * self.w[j] * dots[i] / (s[i] * s[i] * s[i]))
        }))
    }

    /// Diagonal of the approximate Hessian: `D_i = beta what_i / s_i`. The
    /// approximate Hessian acts as `(H~ v)_{i,j} = D_i w_j v_{i,j}` (the first
    /// term of the exact Hessian); `D` is independent of `j`, which decouples
    /// the Newton system across quadrature points.
    pub fn approx_hessian_diag(&self, u: &DMatrix<f64>) -> Result<Vec<f64>> {
        let m = self.row_moments(u)?;
        self.approx_hessian_diag_from_moments(&m)
    }

    /// Same as [`Self::approx_hessian_diag`] from precomputed row moments.
    pub fn approx_hessian_diag_from_moments(&self, moments: &[f64]) -> Result<Vec<f64>> {
        let s = self.denominators(moments)?;
        Ok(s.iter()
            .zip(&self.what)
            .map(|(si, wh)| self.beta * wh / si)
            .collect())
    }
}
