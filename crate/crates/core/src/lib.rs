//! Tensor-train methods for PDE-constrained optimal control and design under
//! high-dimensional uncertainty, with a smoothed shared-sparsity penalty.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`quadrature`]: Gauss-Legendre grids and Lagrange interpolation on the
//!   random parameters.
//! - [`tt`]: tensor-train containers (plain and block, i.e. carrying a spatial
//!   axis) and exact contraction operations.
//! - [`cross`]: adaptive block TT-Cross interpolation with maxvol pivoting.
//! - [`penalty`]: the smoothed shared-sparsity penalty, its derivatives and
//!   the block-diagonal approximate Hessian.
//! - [`lqsolver`]: approximate Newton's method for linear-quadratic stochastic
//!   control, with TT and Monte Carlo backends.
//! - [`elliptic`]: 1D/2D elliptic control benchmarks and post-processing.
//! - [`topopt`]: MBB-beam topology optimization under an uncertain Young's
//!   modulus.
//! - [`mc`]: seeded sampling utilities and the TT-vs-MC comparison harness.

pub mod cross;
pub mod elliptic;
pub mod error;
pub mod linalg;
pub mod lqsolver;
pub mod mc;
pub mod penalty;
pub mod quadrature;
pub mod topopt;
pub mod tt;

pub use error::{Error, Result};
pub use quadrature::GaussGrid;
pub use tt::{BlockTensorTrain, TensorTrain};
