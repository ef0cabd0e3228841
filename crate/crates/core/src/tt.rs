//! Tensor-Train containers and exact contraction operations.
//!
//! A [`TensorTrain`] stores a d-dimensional coefficient tensor as a chain of
//! 3-axis cores linked by ranks, with boundary ranks fixed to one. A
//! [`BlockTensorTrain`] additionally carries a spatial axis on one
//! distinguished core, representing a vector-valued function of the random
//! parameters. All operations here are exact (evaluation, expectation,
//! addition, Hadamard products) or carry a controlled truncation error
//! (rounding).

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{lagrange_all, GaussGrid};

/// One TT core of shape `(r_left, n, r_right)`, stored row-major.
#[derive(Debug, Clone)]
pub struct Core {
    pub r_left: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core {
    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Self {
        Core {
            r_left,
            n,
            r_right,
            data: vec![0.0; r_left * n * r_right],
        }
    }

    pub fn from_fn(
        r_left: usize,
        n: usize,
        r_right: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut c = Core::zeros(r_left, n, r_right);
        for s in 0..r_left {
            for j in 0..n {
                for t in 0..r_right {
                    c.data[(s * n + j) * r_right + t] = f(s, j, t);
                }
            }
        }
        c
    }

    #[inline]
    pub fn at(&self, s: usize, j: usize, t: usize) -> f64 {
        self.data[(s * self.n + j) * self.r_right + t]
    }

    #[inline]
    pub fn set(&mut self, s: usize, j: usize, t: usize, v: f64) {
        self.data[(s * self.n + j) * self.r_right + t] = v;
    }

    /// Slice at mode index `j`, as an `r_left x r_right` matrix.
    pub fn slice(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |s, t| self.at(s, j, t))
    }

    /// Unfolding with rows `(s, j)` and columns `t`.
    pub fn left_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left * self.n, self.r_right, |row, t| {
            self.data[row * self.r_right + t]
        })
    }

    /// Unfolding with rows `s` and columns `(j, t)`.
    pub fn right_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.n * self.r_right, |s, col| {
            self.data[s * self.n * self.r_right + col]
        })
    }

    pub fn from_left_unfold(m: &DMatrix<f64>, r_left: usize, n: usize) -> Self {
        let r_right = m.ncols();
        Core::from_fn(r_left, n, r_right, |s, j, t| m[(s * n + j, t)])
    }

    pub fn from_right_unfold(m: &DMatrix<f64>, n: usize, r_right: usize) -> Self {
        let r_left = m.nrows();
        Core::from_fn(r_left, n, r_right, |s, j, t| m[(s, j * r_right + t)])
    }
}

/// The distinguished core of a block TT, of shape `(r_left, nhat, n, r_right)`.
#[derive(Debug, Clone)]
pub struct BlockCore {
    pub r_left: usize,
    pub nhat: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl BlockCore {
    pub fn zeros(r_left: usize, nhat: usize, n: usize, r_right: usize) -> Self {
        BlockCore {
            r_left,
            nhat,
            n,
            r_right,
            data: vec![0.0; r_left * nhat * n * r_right],
        }
    }

    #[inline]
    pub fn at(&self, s: usize, i: usize, j: usize, t: usize) -> f64 {
        self.data[((s * self.nhat + i) * self.n + j) * self.r_right + t]
    }

    #[inline]
    pub fn set(&mut self, s: usize, i: usize, j: usize, t: usize, v: f64) {
        self.data[((s * self.nhat + i) * self.n + j) * self.r_right + t] = v;
    }

    /// Slice at spatial index `i` and mode index `j`.
    pub fn slice(&self, i: usize, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |s, t| self.at(s, i, j, t))
    }

    /// View as an ordinary core with fused mode `(i, j)` of size `nhat * n`.
    pub fn fuse(&self) -> Core {
        Core {
            r_left: self.r_left,
            n: self.nhat * self.n,
            r_right: self.r_right,
            data: self.data.clone(),
        }
    }

    pub fn unfuse(core: Core, nhat: usize, n: usize) -> Self {
        assert_eq!(core.n, nhat * n);
        BlockCore {
            r_left: core.r_left,
            nhat,
            n,
            r_right: core.r_right,
            data: core.data,
        }
    }
}

/// Scalar-valued tensor train with boundary ranks one.
#[derive(Debug, Clone)]
pub struct TensorTrain {
    cores: Vec<Core>,
}

/// Vector-valued tensor train: one core carries an extra spatial axis of
/// length `nhat`.
#[derive(Debug, Clone)]
pub struct BlockTensorTrain {
    /// Cores before the block core.
    pub pre: Vec<Core>,
    pub block: BlockCore,
    /// Cores after the block core.
    pub post: Vec<Core>,
}

fn validate_chain(ranks: &[(usize, usize)]) -> Result<()> {
    for w in ranks.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::shape(format!(
                "adjacent cores disagree on shared rank: {} vs {}",
                w[0].1, w[1].0
            )));
        }
    }
    Ok(())
}

impl TensorTrain {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::invalid("tensor train needs at least one core"));
        }
        if cores.first().unwrap().r_left != 1 || cores.last().unwrap().r_right != 1 {
            return Err(Error::shape("boundary ranks must be 1"));
        }
        let ranks: Vec<_> = cores.iter().map(|c| (c.r_left, c.r_right)).collect();
        validate_chain(&ranks)?;
        Ok(TensorTrain { cores })
    }

    /// Rank-1 TT of the constant `value`.
    pub fn constant(dims: &[usize], value: f64) -> Self {
        let cores = dims
            .iter()
            .enumerate()
            .map(|(k, &n)| Core::from_fn(1, n, 1, |_, _, _| if k == 0 { value } else { 1.0 }))
            .collect();
        TensorTrain { cores }
    }

    /// Rank-1 TT from per-dimension factor vectors.
    pub fn rank_one(factors: &[Vec<f64>]) -> Self {
        let cores = factors
            .iter()
            .map(|f| Core::from_fn(1, f.len(), 1, |_, j, _| f[j]))
            .collect();
        TensorTrain { cores }
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Rank vector `r_0..r_d`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![self.cores[0].r_left];
        r.extend(self.cores.iter().map(|c| c.r_right));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut Vec<Core> {
        &mut self.cores
    }

    /// Total number of stored entries.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Chain-product evaluation at a grid multi-index.
    pub fn eval(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.dim() {
            return Err(Error::invalid("index length does not match dimension"));
        }
        let mut v = DMatrix::<f64>::identity(1, 1);
        for (c, &j) in self.cores.iter().zip(idx) {
            if j >= c.n {
                return Err(Error::invalid(format!("index {j} out of bounds for mode size {}", c.n)));
            }
            v = &v * c.slice(j);
        }
        Ok(v[(0, 0)])
    }

    /// Weighted full contraction `sum_j w(j) * F(j)` by the right-to-left
    /// core recursion; cost O(d n r^2).
    pub fn expectation(&self, grid: &GaussGrid) -> Result<f64> {
        if grid.dim() != self.dim() {
            return Err(Error::shape("grid dimension does not match tensor train"));
        }
        let mut e = DVector::<f64>::from_element(1, 1.0);
        for (k, c) in self.cores.iter().enumerate().rev() {
            if grid.len(k) != c.n {
                return Err(Error::shape(format!(
                    "mode size {} does not match grid size {} in dimension {k}",
                    c.n,
                    grid.len(k)
                )));
            }
            let w = grid.weights(k);
            let mut summed = DMatrix::<f64>::zeros(c.r_left, c.r_right);
            for j in 0..c.n {
                summed += c.slice(j) * w[j];
            }
            e = summed * e;
        }
        Ok(e[0])
    }

    /// Exact sum by block-diagonal core concatenation.
    pub fn add(&self, other: &TensorTrain) -> Result<TensorTrain> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("mode sizes differ in TT addition"));
        }
        let d = self.dim();
        let cores = (0..d)
            .map(|k| concat_cores(&self.cores[k], &other.cores[k], k == 0, k == d - 1))
            .collect();
        TensorTrain::new(cores)
    }

    /// Multiply all entries by `a` (absorbed into the first core).
    pub fn scale(&self, a: f64) -> TensorTrain {
        let mut tt = self.clone();
        for v in &mut tt.cores[0].data {
            *v *= a;
        }
        tt
    }

    /// Exact elementwise product; ranks multiply.
    pub fn hadamard(&self, other: &TensorTrain) -> Result<TensorTrain> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("mode sizes differ in Hadamard product"));
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
                Core::from_fn(a.r_left * b.r_left, a.n, a.r_right * b.r_right, |s, j, t| {
                    let (sa, sb) = (s / b.r_left, s % b.r_left);
                    let (ta, tb) = (t / b.r_right, t % b.r_right);
                    a.at(sa, j, ta) * b.at(sb, j, tb)
                })
            })
            .collect();
        TensorTrain::new(cores)
    }

    /// Frobenius norm of the represented coefficient tensor, computed exactly
    /// from orthogonalized cores.
    pub fn norm(&self) -> f64 {
        let mut tt = self.clone();
        tt.right_orthogonalize()
    }

    /// Right-orthogonalize all cores but the first; returns the Frobenius
    /// norm, leaving `self` normalized such that the first core carries it.
    fn right_orthogonalize(&mut self) -> f64 {
        for k in (1..self.cores.len()).rev() {
            let m = self.cores[k].right_unfold().transpose(); // (n r_r) x r_l
            let qr = m.qr();
            let q = qr.q();
            let r = qr.r();
            let (n, r_right) = (self.cores[k].n, self.cores[k].r_right);
            self.cores[k] = Core::from_right_unfold(&q.transpose(), n, r_right);
            // fold r^T into previous core from the right
            let prev = self.cores[k - 1].left_unfold() * r.transpose();
            let (r_left, np) = (self.cores[k - 1].r_left, self.cores[k - 1].n);
            self.cores[k - 1] = Core::from_left_unfold(&prev, r_left, np);
        }
        self.cores[0].data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// SVD rounding: right-to-left orthogonalization followed by a
    /// left-to-right truncation sweep with per-core threshold
    /// `delta * |F| / sqrt(d - 1)`, so the total relative error stays
    /// within `delta`.
    pub fn round(&self, delta: f64) -> Result<TensorTrain> {
        if delta < 0.0 {
            return Err(Error::invalid("rounding tolerance must be nonnegative"));
        }
        let mut tt = self.clone();
        let norm = tt.right_orthogonalize();
        let d = tt.cores.len();
        if d == 1 || norm == 0.0 {
            if norm == 0.0 {
                return Ok(TensorTrain::constant(&self.mode_sizes(), 0.0));
            }
            return Ok(tt);
        }
        let tau = delta * norm / ((d - 1) as f64).sqrt();
        for k in 0..d - 1 {
            let m = tt.cores[k].left_unfold();
            let (u, sv) = svd_truncate(&m, tau);
            let (r_left, n) = (tt.cores[k].r_left, tt.cores[k].n);
            tt.cores[k] = Core::from_left_unfold(&u, r_left, n);
            let next = sv * tt.cores[k + 1].right_unfold();
            let (nn, rr) = (tt.cores[k + 1].n, tt.cores[k + 1].r_right);
            tt.cores[k + 1] = Core::from_right_unfold(&next, nn, rr);
        }
        Ok(tt)
    }

    /// Materialize the full coefficient tensor (row-major over the modes).
    /// Intended for small test instances.
    pub fn dense(&self) -> Vec<f64> {
        let dims = self.mode_sizes();
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..total {
            out.push(self.eval(&idx).unwrap());
            for k in (0..dims.len()).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "tt {}", self.dim())?;
        for c in &self.cores {
            writeln!(w, "{} {} {}", c.r_left, c.n, c.r_right)?;
            let line: Vec<String> = c.data.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<TensorTrain> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut it = header.split_whitespace();
        if it.next() != Some("tt") {
            return Err(Error::invalid("expected 'tt' header"));
        }
        let d: usize = parse_tok(it.next())?;
        let mut cores = Vec::with_capacity(d);
        for _ in 0..d {
            let mut hl = String::new();
            r.read_line(&mut hl)?;
            let dims: Vec<usize> = hl
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::invalid("bad core header")))
                .collect::<Result<_>>()?;
            if dims.len() != 3 {
                return Err(Error::invalid("core header must have 3 fields"));
            }
            let mut dl = String::new();
            r.read_line(&mut dl)?;
            let data: Vec<f64> = dl
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::invalid("bad core entry")))
                .collect::<Result<_>>()?;
            if data.len() != dims[0] * dims[1] * dims[2] {
                return Err(Error::invalid("core entry count does not match header"));
            }
            cores.push(Core {
                r_left: dims[0],
                n: dims[1],
                r_right: dims[2],
                data,
            });
        }
        TensorTrain::new(cores)
    }
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::invalid("malformed header token"))
}

fn concat_cores(a: &Core, b: &Core, first: bool, last: bool) -> Core {
    let r_left = if first { 1 } else { a.r_left + b.r_left };
    let r_right = if last { 1 } else { a.r_right + b.r_right };
    let mut c = Core::zeros(r_left, a.n, r_right);
    for j in 0..a.n {
        for s in 0..a.r_left {
            for t in 0..a.r_right {
                c.set(s, j, t, a.at(s, j, t));
            }
        }
        let (so, to) = (if first { 0 } else { a.r_left }, if last { 0 } else { a.r_right });
        for s in 0..b.r_left {
            for t in 0..b.r_right {
                let v = c.at(so + s, j, to + t) + b.at(s, j, t);
                c.set(so + s, j, to + t, v);
            }
        }
    }
    c
}

/// Thin SVD truncation: returns `(U, S V^T)` with `|M - U S V^T|_F <= tau`
/// (absolute threshold; discarded singular values satisfy the bound in the
/// root-sum-square sense). Uses a QR reduction on the long axis first, so the
/// dense SVD only ever sees a small square matrix.
pub fn svd_truncate(m: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if rows >= cols {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let (ur, sv) = small_svd_truncate(&r, tau);
        (q * ur, sv)
    } else {
        // work on the transpose: M^T = Q R, M = R^T Q^T
        let qr = m.transpose().qr();
        let q = qr.q();
        let r = qr.r();
        let (ur, sv) = small_svd_truncate(&r.transpose(), tau);
        (ur, sv * q.transpose())
    }
}

fn small_svd_truncate(m: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut sv: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .cloned()
        .zip(0..)
        .collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // Discard trailing values with root-sum-square <= tau; always keep one.
    let mut keep = sv.len();
    let mut acc = 0.0;
    while keep > 1 {
        let s = sv[keep - 1].0;
        if (acc + s * s).sqrt() > tau {
            break;
        }
        acc += s * s;
        keep -= 1;
    }
    let cols: Vec<usize> = sv[..keep].iter().map(|p| p.1).collect();
    let ur = DMatrix::from_fn(u.nrows(), keep, |i, j| u[(i, cols[j])]);
    let svt = DMatrix::from_fn(keep, vt.ncols(), |i, j| sv[i].0 * vt[(cols[i], j)]);
    (ur, svt)
}

impl BlockTensorTrain {
    pub fn new(pre: Vec<Core>, block: BlockCore, post: Vec<Core>) -> Result<Self> {
        let mut ranks: Vec<(usize, usize)> = pre.iter().map(|c| (c.r_left, c.r_right)).collect();
        ranks.push((block.r_left, block.r_right));
        ranks.extend(post.iter().map(|c| (c.r_left, c.r_right)));
        if ranks.first().unwrap().0 != 1 || ranks.last().unwrap().1 != 1 {
            return Err(Error::shape("boundary ranks must be 1"));
        }
        validate_chain(&ranks)?;
        Ok(BlockTensorTrain { pre, block, post })
    }

    /// Rank-1 block TT, constant in the random parameters, with spatial
    /// values `v`.
    pub fn spatial_constant(v: &[f64], dims: &[usize]) -> Self {
        let mut block = BlockCore::zeros(1, v.len(), dims[0], 1);
        for (i, &vi) in v.iter().enumerate() {
            for j in 0..dims[0] {
                block.set(0, i, j, 0, vi);
            }
        }
        let post = dims[1..]
            .iter()
            .map(|&n| Core::from_fn(1, n, 1, |_, _, _| 1.0))
            .collect();
        BlockTensorTrain {
            pre: Vec::new(),
            block,
            post,
        }
    }

    pub fn dim(&self) -> usize {
        self.pre.len() + 1 + self.post.len()
    }

    pub fn nhat(&self) -> usize {
        self.block.nhat
    }

    /// 0-based position of the block core.
    pub fn block_position(&self) -> usize {
        self.pre.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        let mut m: Vec<usize> = self.pre.iter().map(|c| c.n).collect();
        m.push(self.block.n);
        m.extend(self.post.iter().map(|c| c.n));
        m
    }

    pub fn ranks(&self) -> Vec<usize> {
        let first = self
            .pre
            .first()
            .map(|c| c.r_left)
            .unwrap_or(self.block.r_left);
        let mut r = vec![first];
        r.extend(self.pre.iter().map(|c| c.r_right));
        r.push(self.block.r_right);
        r.extend(self.post.iter().map(|c| c.r_right));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap()
    }

    /// Spatial vector at a grid multi-index: `u(x_i, xi_idx)` for all i.
    pub fn eval_spatial(&self, idx: &[usize]) -> Result<Vec<f64>> {
        if idx.len() != self.dim() {
            return Err(Error::invalid("index length does not match dimension"));
        }
        let p = self.pre.len();
        let mut left = DMatrix::<f64>::identity(1, 1);
        for (c, &j) in self.pre.iter().zip(&idx[..p]) {
            left = &left * c.slice(j);
        }
        let mut right = DMatrix::<f64>::identity(1, 1);
        for (c, &j) in self.post.iter().zip(&idx[p + 1..]).rev() {
            right = c.slice(j) * &right;
        }
        let jb = idx[p];
        if jb >= self.block.n {
            return Err(Error::invalid("block mode index out of bounds"));
        }
        let mut out = Vec::with_capacity(self.block.nhat);
        for i in 0..self.block.nhat {
            let mid = self.block.slice(i, jb);
            out.push((&left * mid * &right)[(0, 0)]);
        }
        Ok(out)
    }

    /// Functional TT evaluation at an off-grid parameter point: interpolates
    /// each core with the Lagrange basis of `grid`, then chain-multiplies.
    pub fn ftt_eval(&self, grid: &GaussGrid, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(Error::invalid("parameter point has wrong dimension"));
        }
        if xi.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::invalid("parameter point outside [-1,1]^d"));
        }
        let p = self.pre.len();
        let mut left = DMatrix::<f64>::identity(1, 1);
        for (k, c) in self.pre.iter().enumerate() {
            left = &left * interp_core(c, grid.nodes(k), xi[k]);
        }
        let mut right = DMatrix::<f64>::identity(1, 1);
        for (off, c) in self.post.iter().enumerate().rev() {
            let k = p + 1 + off;
            right = interp_core(c, grid.nodes(k), xi[k]) * &right;
        }
        let phi = lagrange_all(grid.nodes(p), xi[p]);
        let mut out = Vec::with_capacity(self.block.nhat);
        for i in 0..self.block.nhat {
            let mut mid = DMatrix::<f64>::zeros(self.block.r_left, self.block.r_right);
            for (j, &pj) in phi.iter().enumerate() {
                mid += self.block.slice(i, j) * pj;
            }
            out.push((&left * mid * &right)[(0, 0)]);
        }
        Ok(out)
    }

    /// Per-DOF expectation `E[u](x_i)` by the weighted core contraction.
    pub fn expectation(&self, grid: &GaussGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let p = self.pre.len();
        let mut left = DMatrix::<f64>::identity(1, 1);
        for (k, c) in self.pre.iter().enumerate() {
            left = &left * weighted_sum(c, grid.weights(k));
        }
        let mut right = DMatrix::<f64>::identity(1, 1);
        for (off, c) in self.post.iter().enumerate().rev() {
            right = weighted_sum(c, grid.weights(p + 1 + off)) * &right;
        }
        let w = grid.weights(p);
        let mut out = Vec::with_capacity(self.block.nhat);
        for i in 0..self.block.nhat {
            let mut mid = DMatrix::<f64>::zeros(self.block.r_left, self.block.r_right);
            for j in 0..self.block.n {
                mid += self.block.slice(i, j) * w[j];
            }
            out.push((&left * mid * &right)[(0, 0)]);
        }
        Ok(out)
    }

    /// Per-DOF weighted second moment `m_i = sum_j w_j u_{i,j}^2`, computed
    /// exactly via the Hadamard-square contraction (no approximation).
    pub fn second_moment_per_dof(&self, grid: &GaussGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let p = self.pre.len();
        // Left Gram accumulation: P_k[s,s'] over the squared chain.
        let mut pmat = DMatrix::<f64>::identity(1, 1);
        for (k, c) in self.pre.iter().enumerate() {
            let w = grid.weights(k);
            let mut next = DMatrix::<f64>::zeros(c.r_right, c.r_right);
            for j in 0..c.n {
                let s = c.slice(j);
                next += w[j] * s.transpose() * &pmat * s;
            }
            pmat = next;
        }
        let mut qmat = DMatrix::<f64>::identity(1, 1);
        for (off, c) in self.post.iter().enumerate().rev() {
            let w = grid.weights(p + 1 + off);
            let mut next = DMatrix::<f64>::zeros(c.r_left, c.r_left);
            for j in 0..c.n {
                let s = c.slice(j);
                next += w[j] * &s * &qmat * s.transpose();
            }
            qmat = next;
        }
        let w = grid.weights(p);
        let mut out = Vec::with_capacity(self.block.nhat);
        for i in 0..self.block.nhat {
            let mut m = 0.0;
            for j in 0..self.block.n {
                let b = self.block.slice(i, j);
                let pbq = &pmat * &b * &qmat;
                m += w[j] * pbq.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Expected quadratic form `E[v^T M v]` for a sparse symmetric `M` given
    /// as triplets over the full matrix (both triangles), computed exactly.
    pub fn expected_quadratic_form(
        &self,
        grid: &GaussGrid,
        triplets: &[(usize, usize, f64)],
    ) -> Result<f64> {
        self.check_grid(grid)?;
        let p = self.pre.len();
        let mut pmat = DMatrix::<f64>::identity(1, 1);
        for (k, c) in self.pre.iter().enumerate() {
            let w = grid.weights(k);
            let mut next = DMatrix::<f64>::zeros(c.r_right, c.r_right);
            for j in 0..c.n {
                let s = c.slice(j);
                next += w[j] * s.transpose() * &pmat * s;
            }
            pmat = next;
        }
        let mut qmat = DMatrix::<f64>::identity(1, 1);
        for (off, c) in self.post.iter().enumerate().rev() {
            let w = grid.weights(p + 1 + off);
            let mut next = DMatrix::<f64>::zeros(c.r_left, c.r_left);
            for j in 0..c.n {
                let s = c.slice(j);
                next += w[j] * &s * &qmat * s.transpose();
            }
            qmat = next;
        }
        let w = grid.weights(p);
        // Precompute P * B_i[j] * Q for every (i, j).
        let (rl, rr) = (self.block.r_left, self.block.r_right);
        let nhat = self.block.nhat;
        let n = self.block.n;
        let mut pbq = vec![DMatrix::<f64>::zeros(rl, rr); nhat * n];
        for i in 0..nhat {
            for j in 0..n {
                pbq[i * n + j] = &pmat * self.block.slice(i, j) * &qmat;
            }
        }
        let mut total = 0.0;
        for &(i, ip, m) in triplets {
            let mut e = 0.0;
            for j in 0..n {
                let b = self.block.slice(ip, j);
                e += w[j]
                    * pbq[i * n + j]
                        .iter()
                        .zip(b.iter())
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
            }
            total += m * e;
        }
        Ok(total)
    }

    /// Exact sum of two block TTs with matching shapes and block positions.
    pub fn add(&self, other: &BlockTensorTrain) -> Result<BlockTensorTrain> {
        if self.mode_sizes() != other.mode_sizes()
            || self.block_position() != other.block_position()
            || self.nhat() != other.nhat()
        {
            return Err(Error::shape("block TT shapes differ in addition"));
        }
        let d = self.dim();
        let p = self.pre.len();
        let pre = (0..p)
            .map(|k| concat_cores(&self.pre[k], &other.pre[k], k == 0, false))
            .collect();
        let bf = concat_cores(&self.block.fuse(), &other.block.fuse(), p == 0, p == d - 1);
        let block = BlockCore::unfuse(bf, self.nhat(), self.block.n);
        let post = (0..self.post.len())
            .map(|k| concat_cores(&self.post[k], &other.post[k], false, p + 1 + k == d - 1))
            .collect();
        BlockTensorTrain::new(pre, block, post)
    }

    pub fn scale(&self, a: f64) -> BlockTensorTrain {
        let mut out = self.clone();
        if let Some(first) = out.pre.first_mut() {
            for v in &mut first.data {
                *v *= a;
            }
        } else {
            for v in &mut out.block.data {
                *v *= a;
            }
        }
        out
    }

    /// Frobenius norm of the coefficient tensor (spatial axis included).
    pub fn norm(&self) -> f64 {
        self.as_fused_tt().norm()
    }

    /// SVD rounding at relative tolerance `delta`; the spatial axis stays
    /// fused with its mode during truncation.
    pub fn round(&self, delta: f64) -> Result<BlockTensorTrain> {
        let tt = self.as_fused_tt().round(delta)?;
        let p = self.pre.len();
        let mut cores = tt.cores;
        let post = cores.split_off(p + 1);
        let blockc = cores.pop().unwrap();
        let block = BlockCore::unfuse(blockc, self.nhat(), self.block.n);
        BlockTensorTrain::new(cores, block, post)
    }

    /// Restrict the spatial axis to `range` (e.g. to extract one field from a
    /// stacked `[y; u; lambda]` solution).
    pub fn slice_spatial(&self, range: std::ops::Range<usize>) -> BlockTensorTrain {
        let nhat = range.len();
        let mut block = BlockCore::zeros(self.block.r_left, nhat, self.block.n, self.block.r_right);
        for s in 0..block.r_left {
            for (i, src) in range.clone().enumerate() {
                for j in 0..block.n {
                    for t in 0..block.r_right {
                        block.set(s, i, j, t, self.block.at(s, src, j, t));
                    }
                }
            }
        }
        BlockTensorTrain {
            pre: self.pre.clone(),
            block,
            post: self.post.clone(),
        }
    }

    /// Apply a linear operator to the spatial axis: the block core rows are
    /// mapped through `op`, which receives a spatial vector and returns the
    /// transformed vector (possibly of different length `new_nhat`).
    pub fn map_spatial(&self, new_nhat: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> BlockTensorTrain {
        let b = &self.block;
        let mut block = BlockCore::zeros(b.r_left, new_nhat, b.n, b.r_right);
        let mut buf = vec![0.0; b.nhat];
        for s in 0..b.r_left {
            for j in 0..b.n {
                for t in 0..b.r_right {
                    for i in 0..b.nhat {
                        buf[i] = b.at(s, i, j, t);
                    }
                    let out = op(&buf);
                    debug_assert_eq!(out.len(), new_nhat);
                    for (i, &v) in out.iter().enumerate() {
                        block.set(s, i, j, t, v);
                    }
                }
            }
        }
        BlockTensorTrain {
            pre: self.pre.clone(),
            block,
            post: self.post.clone(),
        }
    }

    /// View with the spatial axis fused into the block core's mode.
    pub fn as_fused_tt(&self) -> TensorTrain {
        let mut cores = self.pre.clone();
        cores.push(self.block.fuse());
        cores.extend(self.post.iter().cloned());
        TensorTrain { cores }
    }

    /// The scalar TT of one spatial component `i`.
    pub fn component(&self, i: usize) -> TensorTrain {
        let b = &self.block;
        let mid = Core::from_fn(b.r_left, b.n, b.r_right, |s, j, t| b.at(s, i, j, t));
        let mut cores = self.pre.clone();
        cores.push(mid);
        cores.extend(self.post.iter().cloned());
        TensorTrain { cores }
    }

    fn check_grid(&self, grid: &GaussGrid) -> Result<()> {
        if grid.dim() != self.dim() {
            return Err(Error::shape("grid dimension does not match block TT"));
        }
        for (k, n) in self.mode_sizes().iter().enumerate() {
            if grid.len(k) != *n {
                return Err(Error::shape(format!(
                    "mode size {n} does not match grid size {} in dimension {k}",
                    grid.len(k)
                )));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "btt {} {}", self.dim(), self.block_position())?;
        for (k, _) in self.mode_sizes().iter().enumerate() {
            if k == self.block_position() {
                let b = &self.block;
                writeln!(w, "{} {} {} {}", b.r_left, b.n, b.r_right, b.nhat)?;
                let line: Vec<String> = b.data.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            } else {
                let c = if k < self.block_position() {
                    &self.pre[k]
                } else {
                    &self.post[k - self.block_position() - 1]
                };
                writeln!(w, "{} {} {}", c.r_left, c.n, c.r_right)?;
                let line: Vec<String> = c.data.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<BlockTensorTrain> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut it = header.split_whitespace();
        if it.next() != Some("btt") {
            return Err(Error::invalid("expected 'btt' header"));
        }
        let d: usize = parse_tok(it.next())?;
        let pos: usize = parse_tok(it.next())?;
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut block = None;
        for k in 0..d {
            let mut hl = String::new();
            r.read_line(&mut hl)?;
            let dims: Vec<usize> = hl
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::invalid("bad core header")))
                .collect::<Result<_>>()?;
            let mut dl = String::new();
            r.read_line(&mut dl)?;
            let data: Vec<f64> = dl
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::invalid("bad core entry")))
                .collect::<Result<_>>()?;
            if k == pos {
                if dims.len() != 4 {
                    return Err(Error::invalid("block core header must have 4 fields"));
                }
                if data.len() != dims[0] * dims[1] * dims[2] * dims[3] {
                    return Err(Error::invalid("core entry count does not match header"));
                }
                block = Some(BlockCore {
                    r_left: dims[0],
                    n: dims[1],
                    r_right: dims[2],
                    nhat: dims[3],
                    data,
                });
            } else {
                if dims.len() != 3 {
                    return Err(Error::invalid("core header must have 3 fields"));
                }
                if data.len() != dims[0] * dims[1] * dims[2] {
                    return Err(Error::invalid("core entry count does not match header"));
                }
                let c = Core {
                    r_left: dims[0],
                    n: dims[1],
                    r_right: dims[2],
                    data,
                };
                if k < pos {
                    pre.push(c);
                } else {
                    post.push(c);
                }
            }
        }
        let block = block.ok_or_else(|| Error::invalid("missing block core"))?;
        BlockTensorTrain::new(pre, block, post)
    }
}

fn interp_core(c: &Core, nodes: &[f64], x: f64) -> DMatrix<f64> {
    let phi = lagrange_all(nodes, x);
    let mut m = DMatrix::<f64>::zeros(c.r_left, c.r_right);
    for (j, &pj) in phi.iter().enumerate() {
        m += c.slice(j) * pj;
    }
    m
}

fn weighted_sum(c: &Core, w: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(c.r_left, c.r_right);
    for j in 0..c.n {
        m += c.slice(j) * w[j];
    }
    m
}
