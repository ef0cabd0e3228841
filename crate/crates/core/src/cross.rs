//! Adaptive block TT-Cross interpolation with maxvol pivoting.
//!
//! The algorithm builds a block tensor train for a vector-valued function of
//! discrete parameters from O(d n r^2) evaluations at adaptively chosen index
//! tuples. Each alternating step interpolates one (block) core exactly at a
//! Cartesian cross of nested index sets, reduces the block core back to three
//! axes by a truncated SVD, and re-selects pivot indices with the maximum
//! volume criterion so the interpolation systems stay well conditioned.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tt::{svd_truncate, BlockCore, BlockTensorTrain, Core};

/// Options controlling a [`block_cross`] run.
#[derive(Debug, Clone)]
pub struct CrossOptions {
    /// Relative truncation and stopping tolerance (delta).
    pub tol: f64,
    /// Maximum number of forward+backward sweep pairs.
    pub max_sweeps: usize,
    /// Seed for the deterministic fallback index generator.
    pub seed: u64,
    /// Maxvol swap acceptance threshold.
    pub swap_tol: f64,
}

impl Default for CrossOptions {
    fn default() -> Self {
        CrossOptions {
            tol: 1e-8,
            max_sweeps: 20,
            seed: 42,
            swap_tol: 1.01,
        }
    }
}

/// Result of a [`block_cross`] run.
#[derive(Debug, Clone)]
pub struct CrossResult {
    /// Final interpolant with the block core at position 0.
    pub tt: BlockTensorTrain,
    /// Completed sweep pairs.
    pub sweeps: usize,
    /// Whether the core-change criterion was met before `max_sweeps`.
    pub converged: bool,
    /// Number of index tuples sent to the evaluator.
    pub evaluations: usize,
    /// Maximum relative block-core change in the last sweep.
    pub last_change: f64,
    /// Final nested left index sets `J_{<k}` per core position.
    pub left_sets: Vec<Vec<Vec<usize>>>,
    /// Final nested right index sets `J_{>k}` per core position.
    pub right_sets: Vec<Vec<Vec<usize>>>,
}

/// Greedy maximum-volume row selection: returns `r` row indices of the tall
/// matrix `m` whose submatrix has locally maximal `|det|`. No single-row swap
/// can increase the volume by more than `swap_tol`; equivalently, all entries
/// of `m * m[P]^{-1}` are bounded by `swap_tol` in absolute value on return.
pub fn maxvol(m: &DMatrix<f64>, swap_tol: f64) -> Result<Vec<usize>> {
    let (rows, r) = m.shape();
    if rows < r {
        return Err(Error::shape(format!(
            "maxvol needs at least as many rows ({rows}) as columns ({r})"
        )));
    }
    if r == 0 {
        return Ok(Vec::new());
    }
    // Initialize from the row pivots of a partially pivoted elimination.
    let mut work = m.clone();
    let mut perm: Vec<usize> = (0..rows).collect();
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    for col in 0..r {
        let mut best = col;
        let mut bestv = work[(col, col)].abs();
        for i in col + 1..rows {
            let v = work[(i, col)].abs();
            if v > bestv {
                best = i;
                bestv = v;
            }
        }
        if bestv <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateMatrix(format!(
                "maxvol input is rank deficient at column {col}"
            )));
        }
        work.swap_rows(col, best);
        perm.swap(col, best);
        let piv = work[(col, col)];
        for i in col + 1..rows {
            let f = work[(i, col)] / piv;
            for j in col..r {
                let v = work[(i, j)] - f * work[(col, j)];
                work[(i, j)] = v;
            }
        }
    }
    let mut p: Vec<usize> = perm[..r].to_vec();
    // Greedy swaps until |m * m[P]^{-1}| <= swap_tol everywhere.
    for _ in 0..1000 {
        let sub = DMatrix::from_fn(r, r, |i, j| m[(p[i], j)]);
        let inv = sub.try_inverse().ok_or_else(|| {
            Error::DegenerateMatrix("singular pivot submatrix in maxvol".into())
        })?;
        let b = m * inv;
        let mut bi = 0;
        let mut bj = 0;
        let mut bv = 0.0;
        for i in 0..rows {
            for j in 0..r {
                if b[(i, j)].abs() > bv {
                    bv = b[(i, j)].abs();
                    bi = i;
                    bj = j;
                }
            }
        }
        if bv <= swap_tol {
            return Ok(p);
        }
        p[bj] = bi;
    }
    Err(Error::SolverFailure("maxvol did not stabilize".into()))
}

/// Sweep state of the cross algorithm: current cores, nested index sets and
/// the interface matrices built from them.
pub struct CrossState {
    /// Mode sizes of the parameter grid.
    pub dims: Vec<usize>,
    /// Spatial length of the evaluator output.
    pub nhat: usize,
    /// Current 3-axis cores; the entry at the active block position is stale.
    pub cores: Vec<Core>,
    /// `left_sets[k]` = J_{<k}: tuples over dims `0..k`, one per left rank.
    pub left_sets: Vec<Vec<Vec<usize>>>,
    /// `right_sets[k]` = J_{>k}: tuples over dims `k+1..d`, one per right rank.
    pub right_sets: Vec<Vec<Vec<usize>>>,
    /// `fleft[k]` = F^{<k}: chain products of cores `0..k` at the left tuples
    /// (tuple index by rank index).
    pub fleft: Vec<DMatrix<f64>>,
    /// `fright[k]` = F^{>k}: chain products of cores `k+1..d` at the right
    /// tuples (tuple index by rank index).
    pub fright: Vec<DMatrix<f64>>,
    /// Number of index tuples evaluated so far.
    pub evaluations: usize,
    swap_tol: f64,
    rng: ChaCha8Rng,
}

impl CrossState {
    /// The full interpolation operator F^{!=k} of size `(r_l n r_r)^2`, with
    /// row order `(t_left, j, t_right)` and column order `(s_left, j, s_right)`.
    /// Mostly useful for testing; the sweeps use its Kronecker factors.
    pub fn build_frame(&self, k: usize) -> DMatrix<f64> {
        let fl = &self.fleft[k];
        let fr = &self.fright[k];
        let (rl, rr, n) = (fl.nrows(), fr.nrows(), self.dims[k]);
        let size = rl * n * rr;
        DMatrix::from_fn(size, size, |row, col| {
            let tl = row / (n * rr);
            let tj = (row / rr) % n;
            let tr = row % rr;
            let sl = col / (n * rr);
            let sj = (col / rr) % n;
            let sr = col % rr;
            if tj == sj {
                fl[(tl, sl)] * fr[(tr, sr)]
            } else {
                0.0
            }
        })
    }

    /// Select `J_{<k+1}` and `F^{<k+1}` by maxvol on the partial chain
    /// `F^{<k} * core_k` (rows ordered left-tuple-major, then mode index).
    fn update_left(&mut self, k: usize) -> Result<()> {
        let c = &self.cores[k];
        let fl = &self.fleft[k];
        let n = c.n;
        let rl = fl.nrows();
        let frame = DMatrix::from_fn(rl * n, c.r_right, |row, s| {
            let (t, j) = (row / n, row % n);
            (0..c.r_left).map(|u| fl[(t, u)] * c.at(u, j, s)).sum()
        });
        let p = maxvol(&frame, self.swap_tol)?;
        self.left_sets[k + 1] = p
            .iter()
            .map(|&row| {
                let mut tup = self.left_sets[k][row / n].clone();
                tup.push(row % n);
                tup
            })
            .collect();
        self.fleft[k + 1] = DMatrix::from_fn(p.len(), p.len(), |i, j| frame[(p[i], j)]);
        Ok(())
    }

    /// Select `J_{>k-1}` and `F^{>k-1}` by maxvol on the partial chain
    /// `core_k * F^{>k}` (rows ordered mode-index-major, then right tuple).
    fn update_right(&mut self, k: usize) -> Result<()> {
        let c = &self.cores[k];
        let fr = &self.fright[k];
        let n = c.n;
        let rr = fr.nrows();
        let frame = DMatrix::from_fn(n * rr, c.r_left, |row, s| {
            let (j, t) = (row / rr, row % rr);
            (0..c.r_right).map(|u| c.at(s, j, u) * fr[(t, u)]).sum()
        });
        let p = maxvol(&frame, self.swap_tol)?;
        self.right_sets[k - 1] = p
            .iter()
            .map(|&row| {
                let mut tup = vec![row / rr];
                tup.extend(self.right_sets[k][row % rr].iter());
                tup
            })
            .collect();
        self.fright[k - 1] = DMatrix::from_fn(p.len(), p.len(), |i, j| frame[(p[i], j)]);
        Ok(())
    }

    /// Replace the cores in `k..d` by seeded random values and redo the
    /// right-set selection half-sweep. Used when the warm-start cores give a
    /// degenerate interface (e.g. an all-zero initial guess).
    fn randomize_right(&mut self, from: usize) -> Result<()> {
        let d = self.dims.len();
        for k in from..d {
            let (rl, n, rr) = (self.cores[k].r_left, self.cores[k].n, self.cores[k].r_right);
            self.cores[k] = Core::from_fn(rl, n, rr, |_, _, _| self.rng.gen_range(-1.0..1.0));
        }
        for k in (from.max(1)..d).rev() {
            self.update_right(k)?;
        }
        Ok(())
    }

    /// Warm-start setup: build all right sets from the existing cores by a
    /// backward maxvol half-sweep (no evaluator calls). Falls back to seeded
    /// random cores when the initial guess is degenerate.
    fn setup(&mut self) -> Result<()> {
        let d = self.dims.len();
        let mut ok = true;
        for k in (1..d).rev() {
            if self.update_right(k).is_err() {
                ok = false;
                break;
            }
        }
        if !ok {
            self.randomize_right(0)?;
        }
        Ok(())
    }
}

/// Block TT-Cross interpolation of an `nhat`-vector-valued function on the
/// grid `dims`, warm-started from `init` (block core at position 0).
///
/// `evaluate` receives a batch of full multi-indices and must return one
/// spatial vector per index; it is called once per core update, so callers may
/// parallelize over the batch internally.
pub fn block_cross<F>(
    evaluate: F,
    init: &BlockTensorTrain,
    opts: &CrossOptions,
) -> Result<CrossResult>
where
    F: Fn(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    if opts.tol <= 0.0 {
        return Err(Error::invalid("cross tolerance must be positive"));
    }
    if init.block_position() != 0 {
        return Err(Error::invalid("cross warm start expects the block core at position 0"));
    }
    let dims = init.mode_sizes();
    let d = dims.len();
    let nhat = init.nhat();
    // Flatten the initial guess: position 0 holds a stale 3-axis core that only
    // fixes the starting rank; the block values re-enter via the first solve.
    let init_first = Core::from_fn(1, dims[0], init.block.r_right, |_, j, t| {
        (0..nhat).map(|i| init.block.at(0, i, j, t)).sum::<f64>() / nhat as f64
    });
    let mut cores = vec![init_first];
    cores.extend(init.post.iter().cloned());
    let mut state = CrossState {
        dims: dims.clone(),
        nhat,
        cores,
        left_sets: (0..d).map(|_| vec![Vec::new()]).collect(),
        right_sets: (0..d).map(|_| vec![Vec::new()]).collect(),
        fleft: (0..d).map(|_| DMatrix::identity(1, 1)).collect(),
        fright: (0..d).map(|_| DMatrix::identity(1, 1)).collect(),
        evaluations: 0,
        swap_tol: opts.swap_tol,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
    };
    state.left_sets[0] = vec![Vec::new()];
    state.setup()?;

    let mut prev_tt: Option<BlockTensorTrain> = None;
    let mut last_change = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;
    let mut final_block: Option<BlockCore> = None;

    while sweeps < opts.max_sweeps {
        // Forward half-sweep: positions 0..d-2 keep the left factors.
        for k in 0..d.saturating_sub(1) {
            let raw = solve_block(&mut state, k, &evaluate)?;
            let (rl, rr, n) = (raw.r_left, raw.r_right, raw.n);
            // rows (s, j), columns (i, t)
            let m = DMatrix::from_fn(rl * n, nhat * rr, |row, col| {
                raw.at(row / n, col / rr, row % n, col % rr)
            });
            let norm = m.norm();
            if norm == 0.0 {
                state.cores[k] = unit_core(rl, n);
                let p = vec![0usize];
                state.left_sets[k + 1] = vec![{
                    let mut t = state.left_sets[k][0].clone();
                    t.push(0);
                    t
                }];
                state.fleft[k + 1] = DMatrix::identity(1, 1);
                let _ = p;
                continue;
            }
            let (u, _sv) = svd_truncate(&m, opts.tol * norm / (d as f64).sqrt());
            state.cores[k] = Core::from_left_unfold(&u, rl, n);
            state.update_left(k)?;
        }
        // Backward half-sweep: positions d-1..1 keep the right factors, then a
        // final solve leaves the block core at position 0.
        for k in (0..d).rev() {
            let raw = solve_block(&mut state, k, &evaluate)?;
            if k == 0 {
                final_block = Some(raw);
                break;
            }
            let (rl, rr, n) = (raw.r_left, raw.r_right, raw.n);
            // rows (s, i), columns (j, t)
            let m = DMatrix::from_fn(rl * nhat, n * rr, |row, col| {
                raw.at(row / nhat, row % nhat, col / rr, col % rr)
            });
            let norm = m.norm();
            if norm == 0.0 {
                state.cores[k] = unit_core(rr, n);
                state.right_sets[k - 1] = vec![{
                    let mut t = vec![0usize];
                    t.extend(state.right_sets[k][0].iter());
                    t
                }];
                state.fright[k - 1] = DMatrix::identity(1, 1);
                continue;
            }
            let (u, sv) = svd_truncate(&m.transpose(), opts.tol * norm / (d as f64).sqrt());
            let _ = sv;
            // u has orthonormal columns spanning the row space of m
            state.cores[k] = Core::from_right_unfold(&u.transpose(), n, rr);
            state.update_right(k)?;
        }
        // Gauge-invariant stopping criterion: relative Frobenius change of
        // the assembled iterate (the per-core difference is only defined up
        // to the orthogonal gauge of the SVD factors).
        let iterate = BlockTensorTrain::new(
            Vec::new(),
            final_block.clone().unwrap(),
            state.cores[1..].to_vec(),
        )?;
        let change = match &prev_tt {
            None => f64::INFINITY,
            Some(old) => {
                let norm = iterate.norm();
                let diff = iterate.add(&old.scale(-1.0))?.norm();
                if norm == 0.0 {
                    if diff == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    diff / norm
                }
            }
        };
        prev_tt = Some(iterate);
        sweeps += 1;
        last_change = change;
        if change <= opts.tol {
            converged = true;
            break;
        }
    }

    let block = final_block.ok_or_else(|| Error::SolverFailure("cross performed no sweeps".into()))?;
    let tt = BlockTensorTrain::new(Vec::new(), block, state.cores[1..].to_vec())?;
    Ok(CrossResult {
        tt,
        sweeps,
        converged,
        evaluations: state.evaluations,
        last_change,
        left_sets: state.left_sets,
        right_sets: state.right_sets,
    })
}

fn unit_core(r_left: usize, n: usize) -> Core {
    Core::from_fn(r_left, n, 1, |s, j, _| if s == 0 && j == 0 { 1.0 } else { 0.0 })
}


/// Evaluate at the cross `J_{<k} x [n] x J_{>k}` and solve the interpolation
/// system for the raw block core at position `k`.
fn solve_block<F>(state: &mut CrossState, k: usize, evaluate: &F) -> Result<BlockCore>
where
    F: Fn(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    let d = state.dims.len();
    let n = state.dims[k];
    let nhat = state.nhat;
    for attempt in 0..2 {
        let rl = state.left_sets[k].len();
        let rr = state.right_sets[k].len();
        let fl = state.fleft[k].clone();
        let fr = state.fright[k].clone();
        if ill_conditioned(&fl) || ill_conditioned(&fr) {
            if attempt == 0 && k + 1 < d {
                // Degenerate right interface from a stale warm start: redraw.
                state.randomize_right(k + 1)?;
                continue;
            }
            return Err(Error::DegenerateMatrix(format!(
                "interface matrix at position {k} is numerically singular"
            )));
        }
        let mut batch = Vec::with_capacity(rl * n * rr);
        for tl in 0..rl {
            for j in 0..n {
                for tr in 0..rr {
                    let mut idx = state.left_sets[k][tl].clone();
                    idx.push(j);
                    idx.extend(state.right_sets[k][tr].iter());
                    debug_assert_eq!(idx.len(), d);
                    batch.push(idx);
                }
            }
        }
        state.evaluations += batch.len();
        let values = evaluate(&batch)?;
        if values.len() != batch.len() || values.iter().any(|v| v.len() != nhat) {
            return Err(Error::shape("evaluator returned wrong batch shape"));
        }
        let lu_l = fl.clone().lu();
        let lu_r = fr.clone().lu();
        let mut raw = BlockCore::zeros(rl, nhat, n, rr);
        for i in 0..nhat {
            for j in 0..n {
                let data = DMatrix::from_fn(rl, rr, |tl, tr| values[(tl * n + j) * rr + tr][i]);
                // data = F^{<k} G F^{>k}^T  =>  G = F^{<k}^{-1} data F^{>k}^{-T}
                let x = lu_l
                    .solve(&data)
                    .ok_or_else(|| Error::DegenerateMatrix("singular left interface".into()))?;
                let gt = lu_r
                    .solve(&x.transpose())
                    .ok_or_else(|| Error::DegenerateMatrix("singular right interface".into()))?;
                for s in 0..rl {
                    for t in 0..rr {
                        raw.set(s, i, j, t, gt[(t, s)]);
                    }
                }
            }
        }
        return Ok(raw);
    }
    unreachable!()
}

fn ill_conditioned(m: &DMatrix<f64>) -> bool {
    match m.clone().try_inverse() {
        None => true,
        Some(inv) => m.norm() * inv.norm() > 1e12,
    }
}
