//! Small direct linear algebra kernels used by the PDE solvers.
//!
//! The spatial operators in all benchmarks are assembled on structured grids,
//! so a symmetric banded LDL^T factorization covers both the SPD systems
//! (elasticity, filters) and the saddle-point KKT systems (after interleaving
//! the state/control/adjoint unknowns per node the KKT matrix is banded and
//! its leading pivots are definite, so unpivoted LDL^T is stable).

use crate::error::{Error, Result};

/// Symmetric banded matrix in lower-band storage: `band[k][j] = a(j + k, j)`
/// for `k = 0..=hbw`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub hbw: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        BandMatrix {
            n,
            hbw,
            band: vec![0.0; (hbw + 1) * n],
        }
    }

    #[inline]
    fn idx(&self, k: usize, j: usize) -> usize {
        k * self.n + j
    }

    /// Accumulate `a(i, j) += v` (and symmetrically). Only the lower triangle
    /// is stored; callers may pass (i, j) in either order.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        debug_assert!(k <= self.hbw, "entry ({i},{j}) outside bandwidth {}", self.hbw);
        let id = self.idx(k, lo);
        self.band[id] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.hbw {
            return 0.0;
        }
        self.band[self.idx(k, lo)]
    }

    /// Symmetric matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let kmax = self.hbw.min(self.n - 1 - j);
            y[j] += self.band[self.idx(0, j)] * x[j];
            for k in 1..=kmax {
                let a = self.band[self.idx(k, j)];
                y[j + k] += a * x[j];
                y[j] += a * x[j + k];
            }
        }
        y
    }

    /// Unpivoted LDL^T factorization. Fails on a (near-)zero pivot.
    pub fn ldlt(&self) -> Result<BandLdlt> {
        let n = self.n;
        let m = self.hbw;
        let mut l = self.band.clone();
        let mut d = vec![0.0; n];
        let scale = self
            .band
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for j in 0..n {
            let start = j.saturating_sub(m);
            let mut dj = l[j]; // band[0][j]
            for k in start..j {
                let ljk = l[(j - k) * n + k];
                dj -= ljk * ljk * d[k];
            }
            if dj.abs() <= 1e-200 * scale {
                return Err(Error::DegenerateOperator(format!(
                    "zero pivot at column {j} in banded LDL^T"
                )));
            }
            d[j] = dj;
            let imax = (j + m).min(n - 1);
            for i in (j + 1)..=imax {
                let mut s = l[(i - j) * n + j];
                let kstart = i.saturating_sub(m).max(start);
                for k in kstart..j {
                    s -= l[(i - k) * n + k] * l[(j - k) * n + k] * d[k];
                }
                l[(i - j) * n + j] = s / dj;
            }
            l[j] = 1.0;
        }
        Ok(BandLdlt { n, hbw: m, l, d })
    }
}

/// Factorized form of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLdlt {
    n: usize,
    hbw: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandLdlt {
    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let m = self.hbw;
        // L z = b
        for j in 0..n {
            let bj = b[j];
            if bj != 0.0 {
                let imax = (j + m).min(n - 1);
                for i in (j + 1)..=imax {
                    b[i] -= self.l[(i - j) * n + j] * bj;
                }
            }
        }
        // D y = z
        for j in 0..n {
            b[j] /= self.d[j];
        }
        // L^T x = y
        for j in (0..n).rev() {
            let imax = (j + m).min(n - 1);
            let mut s = b[j];
            for i in (j + 1)..=imax {
                s -= self.l[(i - j) * n + j] * b[i];
            }
            b[j] = s;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}


/// Sparse matrix in triplet form (duplicate entries are additive). The
/// problem operators on structured grids have a handful of entries per row,
/// so triplets are both simple and fast enough for assembly and products.
#[derive(Debug, Clone)]
pub struct SpMat {
    pub nrows: usize,
    pub ncols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SpMat {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SpMat {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.triplets.push((i, j, v));
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(i, j, v) in &self.triplets {
            y[i] += v * x[j];
        }
        y
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(i, j, v) in &self.triplets {
            y[j] += v * x[i];
        }
        y
    }

    pub fn scale(&self, a: f64) -> SpMat {
        SpMat {
            nrows: self.nrows,
            ncols: self.ncols,
            triplets: self.triplets.iter().map(|&(i, j, v)| (i, j, a * v)).collect(),
        }
    }

    /// Dense copy, for small test instances.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] += v;
        }
        m
    }
}
