//! Gauss quadrature grids and Lagrange interpolation for the random
//! parameters.
//!
//! All experiments draw the parameters from the uniform density on `[-1, 1]`,
//! so the weights are normalized to sum to one: the quadrature approximates
//! `E[f] = (1/2) * integral of f over [-1, 1]` per dimension and is exact for
//! polynomials of degree up to `2n - 1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Per-dimension Gauss quadrature nodes and probability-normalized weights
/// defining the discrete parameter domain.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct GaussGrid {
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl GaussGrid {
    /// Isotropic grid: `d` dimensions with `n` Gauss-Legendre points each.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension count must be positive"));
        }
        let (nodes, weights) = gauss_nodes(n)?;
        Ok(GaussGrid {
            nodes: vec![nodes; d],
            weights: vec![weights; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Number of points in dimension `k`.
    pub fn len(&self, k: usize) -> usize {
        self.nodes[k].len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self, k: usize) -> &[f64] {
        &self.nodes[k]
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    /// Node coordinates of the multi-index `idx` (0-based).
    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(k, &j)| self.nodes[k][j])
            .collect()
    }

    /// Product weight of the multi-index `idx`.
    pub fn weight(&self, idx: &[usize]) -> f64 {
        idx.iter()
            .enumerate()
            .map(|(k, &j)| self.weights[k][j])
            .product()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, weights normalized so they
/// sum to one (quadrature against the uniform density 1/2).
///
/// Computed by the Golub-Welsch procedure: the nodes are the eigenvalues of
/// the symmetric tridiagonal Jacobi matrix of the Legendre recurrence, and
/// the weights are the squared first components of the eigenvectors.
pub fn gauss_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("quadrature order must be at least 1"));
    }
    if n == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    // Jacobi matrix for Legendre polynomials: zero diagonal, off-diagonal
    // b_k = k / sqrt(4k^2 - 1).
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    // Eigenvectors are unit-norm, so the weights already sum to 1; renormalize
    // to remove rounding drift.
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok((nodes, weights))
}

/// Lagrange cardinal polynomial `phi_j` over `nodes`, evaluated at `x`.
///
/// Satisfies `phi_j(nodes[j']) = delta(j, j')`.
pub fn lagrange_eval(nodes: &[f64], j: usize, x: f64) -> Result<f64> {
    if j >= nodes.len() {
        return Err(Error::invalid(format!(
            "Lagrange index {j} out of range for {} nodes",
            nodes.len()
        )));
    }
    let mut p = 1.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m != j {
            p *= (x - xm) / (nodes[j] - xm);
        }
    }
    Ok(p)
}

/// Evaluate all Lagrange cardinal polynomials at `x`.
pub fn lagrange_all(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| lagrange_eval(nodes, j, x).unwrap())
        .collect()
}
