//! Two-block semi-proximal ADMM on the dual of
//!
//! ```text
//! min  F(X) - <W, X>
//! s.t. ||L_j(X) - c_j|| <= delta_j   (ball blocks)
//!      L_j(X) = c_j                  (equality blocks)
//!      L_j(X) <= c_j                 (upper-bound blocks)
//! ```
//!
//! with `F = ||.||_* + indicator(||X|| <= R)` for sensing and
//! `F = tr + indicator(X psd)` for PSD completion. The dual reads
//!
//! ```text
//! min  <c, y> + sum_j q_j(y_j) + h(S)   s.t.  L^*(y) + S = W
//! ```
//!
//! where `h = F^*` and `q_j` is `delta_j ||.||` on ball blocks and the
//! indicator of the nonnegative orthant on upper-bound blocks. The blocks
//! with a `q_j` are split as `y_j = u_j`. Block one is `y` (a linear solve
//! with the Gram matrix `L L^* + D`, factored once); block two is
//! `(S, u)`, which separates into a spectral prox and vector proxes. The
//! multiplier of `L^*(y) + S = W` is the primal matrix `X`.

use std::borrow::Cow;
use std::collections::HashMap;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::SamplingOperator;
use crate::spectral::{self, Matrix, Vector};

use super::{GapMode, ResidualRecord, SolveOptions, SolveResult, SolveStatus};

/// Feasible region of the matrix variable, carried by `F`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Domain {
    SpectralBall { radius: f64 },
    Psd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ConstraintKind {
    Ball(f64),
    Equal,
    Upper,
}

impl ConstraintKind {
    fn split(&self) -> bool {
        !matches!(self, ConstraintKind::Equal)
    }
}

pub(crate) struct ConstraintBlock<'a> {
    pub op: Cow<'a, SamplingOperator>,
    pub target: Cow<'a, Vector>,
    pub kind: ConstraintKind,
}

/// Root-mean-square norm of the functionals of `op`. Each block is
/// rescaled internally to unit RMS so that the multipliers of all blocks
/// live on comparable scales.
fn rms_row_norm(op: &SamplingOperator) -> f64 {
    if op.is_empty() {
        return 1.0;
    }
    let sq = match op {
        SamplingOperator::Explicit { data, .. } => data.norm_squared(),
        SamplingOperator::Mask { indices, symmetric, .. } => indices
            .iter()
            .map(|(i, j)| if *symmetric && i != j { 0.5 } else { 1.0 })
            .sum(),
    };
    let rms = (sq / op.len() as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

enum GramSolver {
    Diagonal(Vector),
    Dense(Cholesky<f64, nalgebra::Dyn>),
}

impl GramSolver {
    fn solve_in_place(&self, rhs: &mut Vector) {
        match self {
            GramSolver::Diagonal(d) => rhs.component_div_assign(d),
            GramSolver::Dense(ch) => ch.solve_mut(rhs),
        }
    }
}

/// Iterate state, reusable as a warm start for a later solve on the same
/// constraint set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmState {
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    pub sigma: f64,
}

/// Period of the exact recomputation of `L(X)`.
const LX_REFRESH: usize = 100;

pub(crate) struct Engine<'a> {
    shape: (usize, usize),
    domain: Domain,
    blocks: Vec<ConstraintBlock<'a>>,
    /// Internal row scaling of each block.
    scales: Vec<f64>,
    offsets: Vec<usize>,
    dim: usize,
    target: Vector,
    split_mask: Vec<bool>,
    gram: GramSolver,
}

fn block_gram_is_sparse(blocks: &[ConstraintBlock<'_>]) -> bool {
    blocks
        .iter()
        .all(|b| matches!(b.op.as_ref(), SamplingOperator::Mask { .. }))
}

impl<'a> Engine<'a> {
    pub fn new(shape: (usize, usize), domain: Domain, blocks: Vec<ConstraintBlock<'a>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut dim = 0;
        for b in &blocks {
            if b.op.shape() != shape {
                return Err(invalid("constraint operator shape differs from the problem shape"));
            }
            if b.op.len() != b.target.len() {
                return Err(invalid("constraint right-hand side has the wrong length"));
            }
            offsets.push(dim);
            dim += b.op.len();
        }
        offsets.push(dim);
        let scales: Vec<f64> = blocks.iter().map(|b| 1.0 / rms_row_norm(&b.op)).collect();
        let mut target = Vector::zeros(dim);
        let mut split_mask = vec![false; dim];
        for (k, b) in blocks.iter().enumerate() {
            target
                .rows_mut(offsets[k], b.op.len())
                .copy_from(&(b.target.as_ref() * scales[k]));
            for s in &mut split_mask[offsets[k]..offsets[k + 1]] {
                *s = b.kind.split();
            }
        }
        let gram = Self::factor_gram(&blocks, &scales, &offsets, dim, &split_mask)?;
        Ok(Self {
            shape,
            domain,
            blocks,
            scales,
            offsets,
            dim,
            target,
            split_mask,
            gram,
        })
    }

    fn factor_gram(
        blocks: &[ConstraintBlock<'_>],
        scales: &[f64],
        offsets: &[usize],
        dim: usize,
        split_mask: &[bool],
    ) -> Result<GramSolver> {
        if block_gram_is_sparse(blocks) {
            // Entry samplers: accumulate the Gram sparsely and keep it
            // diagonal when no two functionals overlap.
            let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
            for (a, ba) in blocks.iter().enumerate() {
                for (b, bb) in blocks.iter().enumerate() {
                    let g = ba.op.gram(&bb.op)?;
                    let sab = scales[a] * scales[b];
                    for l in 0..g.ncols() {
                        for k in 0..g.nrows() {
                            let v = g[(k, l)] * sab;
                            if v != 0.0 {
                                *entries.entry((offsets[a] + k, offsets[b] + l)).or_insert(0.0) += v;
                            }
                        }
                    }
                }
            }
            if entries.keys().all(|(i, j)| i == j) {
                let mut d = Vector::from_iterator(dim, split_mask.iter().map(|&s| if s { 1.0 } else { 0.0 }));
                for ((i, _), v) in entries {
                    d[i] += v;
                }
                if d.iter().any(|&v| v <= 0.0) {
                    return Err(invalid("constraint functionals are linearly dependent"));
                }
                return Ok(GramSolver::Diagonal(d));
            }
            let mut g = Matrix::zeros(dim, dim);
            for ((i, j), v) in entries {
                g[(i, j)] = v;
            }
            return Self::dense_factor(g, split_mask);
        }
        let mut g = Matrix::zeros(dim, dim);
        for (a, ba) in blocks.iter().enumerate() {
            for (b, bb) in blocks.iter().enumerate().skip(a) {
                let blk = ba.op.gram(&bb.op)? * (scales[a] * scales[b]);
                g.view_mut((offsets[a], offsets[b]), (blk.nrows(), blk.ncols()))
                    .copy_from(&blk);
                if a != b {
                    g.view_mut((offsets[b], offsets[a]), (blk.ncols(), blk.nrows()))
                        .copy_from(&blk.transpose());
                }
            }
        }
        Self::dense_factor(g, split_mask)
    }

    fn dense_factor(mut g: Matrix, split_mask: &[bool]) -> Result<GramSolver> {
        for (i, &s) in split_mask.iter().enumerate() {
            if s {
                g[(i, i)] += 1.0;
            }
        }
        Cholesky::new(g)
            .map(GramSolver::Dense)
            .ok_or_else(|| invalid("constraint functionals are linearly dependent"))
    }

    fn apply_all(&self, x: &Matrix) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for (k, b) in self.blocks.iter().enumerate() {
            let v = b.op.apply_unchecked(x) * self.scales[k];
            out.rows_mut(self.offsets[k], v.len()).copy_from(&v);
        }
        out
    }

    fn adjoint_all(&self, y: &Vector) -> Matrix {
        let mut out = Matrix::zeros(self.shape.0, self.shape.1);
        for (k, b) in self.blocks.iter().enumerate() {
            let seg: Vec<f64> = y.as_slice()[self.offsets[k]..self.offsets[k + 1]]
                .iter()
                .map(|v| v * self.scales[k])
                .collect();
            b.op.adjoint_accumulate(&seg, &mut out);
        }
        out
    }

    fn block<'v>(&self, v: &'v Vector, k: usize) -> nalgebra::DVectorView<'v, f64> {
        v.rows(self.offsets[k], self.offsets[k + 1] - self.offsets[k])
    }

    /// Norm of the primal constraint violation of `L(x)` (already applied,
    /// in internal units), in the original and in the internal units.
    fn primal_violation(&self, lx: &Vector) -> (f64, f64) {
        let mut sq = 0.0;
        let mut sq_scaled = 0.0;
        for (k, b) in self.blocks.iter().enumerate() {
            let r = (self.block(lx, k) - self.block(&self.target, k)) / self.scales[k];
            let v = match b.kind {
                ConstraintKind::Ball(delta) => (r.norm() - delta).max(0.0).powi(2),
                ConstraintKind::Equal => r.norm_squared(),
                ConstraintKind::Upper => r.iter().map(|v| v.max(0.0).powi(2)).sum(),
            };
            sq += v;
            sq_scaled += v * self.scales[k].powi(2);
        }
        (sq.sqrt(), sq_scaled.sqrt())
    }

    /// Squared norm of a multiplier-space vector in the original block units.
    fn unscaled_norm_squared(&self, v: &Vector) -> f64 {
        (0..self.blocks.len())
            .map(|k| (self.block(v, k).norm() * self.scales[k]).powi(2))
            .sum()
    }

    /// `sum_j q_j(u_j)` for the split blocks, evaluated on `u`.
    fn q_value(&self, u: &Vector) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| match b.kind {
                ConstraintKind::Ball(delta) => delta * self.scales[k] * self.block(u, k).norm(),
                _ => 0.0,
            })
            .sum()
    }

    /// `<target, y>` with the upper-bound blocks paired with `u` instead:
    /// their conjugate is finite only on `u >= 0`, which `u` satisfies
    /// exactly while `y` does so only in the limit.
    fn target_pairing(&self, y: &Vector, u: &Vector) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let src = if matches!(b.kind, ConstraintKind::Upper) { u } else { y };
                self.block(&self.target, k).dot(&self.block(src, k))
            })
            .sum()
    }

    fn prox_q(&self, point: &mut Vector, sigma: f64) {
        for (k, b) in self.blocks.iter().enumerate() {
            let range = self.offsets[k]..self.offsets[k + 1];
            let seg = &mut point.as_mut_slice()[range];
            match b.kind {
                ConstraintKind::Ball(delta) => {
                    let delta = delta * self.scales[k];
                    let norm = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let shrink = if norm > delta / sigma { 1.0 - delta / (sigma * norm) } else { 0.0 };
                    seg.iter_mut().for_each(|v| *v *= shrink);
                }
                ConstraintKind::Upper => seg.iter_mut().for_each(|v| *v = v.max(0.0)),
                ConstraintKind::Equal => {}
            }
        }
    }

    /// Returns `(S, X_hat, F(X_hat), h(S))` where `S = prox_{h/sigma}(p)` and
    /// `X_hat = sigma (p - S)` lies in the domain of `F`.
    fn spectral_step(&self, p: &Matrix, sigma: f64) -> Result<(Matrix, Matrix, f64, f64)> {
        match self.domain {
            Domain::SpectralBall { radius } => {
                let dec = spectral::svd(p)?;
                let cap = radius / sigma;
                let s_vals = dec.singular_values.map(|s| {
                    if s <= 1.0 {
                        s
                    } else if s <= 1.0 + cap {
                        1.0
                    } else {
                        s - cap
                    }
                });
                let x_vals = dec.singular_values.map(|s| sigma * (s - 1.0).clamp(0.0, cap));
                let h = radius * s_vals.iter().map(|v| (v - 1.0).max(0.0)).sum::<f64>();
                let f = x_vals.sum();
                Ok((dec.with_values(&s_vals), dec.with_values(&x_vals), f, h))
            }
            Domain::Psd => {
                let sym = (p + p.transpose()) * 0.5;
                let (vals, vecs) = spectral::sym_eigen(&sym)?;
                let rebuild = |f: &dyn Fn(f64) -> f64| {
                    let mut scaled = vecs.clone();
                    for (j, mut col) in scaled.column_iter_mut().enumerate() {
                        col *= f(vals[j]);
                    }
                    let m = scaled * vecs.transpose();
                    (&m + m.transpose()) * 0.5
                };
                let s = rebuild(&|l: f64| l.min(1.0));
                let x = rebuild(&|l: f64| sigma * (l - 1.0).max(0.0));
                let f = vals.iter().map(|l| sigma * (l - 1.0).max(0.0)).sum();
                Ok((s, x, f, 0.0))
            }
        }
    }

    pub fn initial_state(&self) -> AdmmState {
        let n = self.shape.0 * self.shape.1;
        AdmmState {
            y: vec![0.0; self.dim],
            s: vec![0.0; n],
            u: vec![0.0; self.dim],
            v: vec![0.0; self.dim],
            x: vec![0.0; n],
            sigma: 1.0,
        }
    }

    fn check_state(&self, st: &AdmmState) -> Result<()> {
        let n = self.shape.0 * self.shape.1;
        if st.y.len() != self.dim || st.u.len() != self.dim || st.v.len() != self.dim {
            return Err(invalid("warm start has the wrong number of multipliers"));
        }
        if st.s.len() != n || st.x.len() != n || !(st.sigma > 0.0) {
            return Err(invalid("warm start matrices have the wrong shape"));
        }
        Ok(())
    }

    pub fn solve(
        &self,
        w: &Matrix,
        c_norm: f64,
        opts: &SolveOptions,
        warm: Option<&AdmmState>,
    ) -> Result<(SolveResult, AdmmState)> {
        opts.validate()?;
        let (rows, cols) = self.shape;
        let state = match warm {
            Some(s) => {
                self.check_state(s)?;
                s.clone()
            }
            None => {
                let mut s = self.initial_state();
                s.sigma = opts.admm_sigma0;
                s
            }
        };
        let mut sigma = state.sigma;
        let mut y = Vector::from_vec(state.y);
        let mut u = Vector::from_vec(state.u);
        let mut v = Vector::from_vec(state.v);
        let mut s_mat = Matrix::from_vec(rows, cols, state.s);
        let mut x = Matrix::from_vec(rows, cols, state.x);
        let split = Vector::from_iterator(self.dim, self.split_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }));

        let pscale = 1.0
            + self
                .blocks
                .iter()
                .map(|b| b.target.norm())
                .sum::<f64>();
        let dscale = 1.0 + c_norm;
        let tau = opts.step_length;

        let mut history = Vec::new();
        let mut last = None;
        let mut x_hat = x.clone();
        let mut iterations = 0;
        let mut status = SolveStatus::MaxIterations;
        let mut window_pinf: Option<f64> = None;
        let mut next_window_check = opts.stagnation_window;

        // L(W), L(S) and L(X) are carried along so that one iteration costs
        // one forward and one adjoint application; L(X) is refreshed exactly
        // every `LX_REFRESH` iterations and before declaring convergence.
        let lw = self.apply_all(w);
        let mut ls = self.apply_all(&s_mat);
        let mut lx = self.apply_all(&x);

        for it in 1..=opts.max_iters {
            iterations = it;
            // y-block: (L L^* + D) y = L(W - S + X/sigma) + D(u + v/sigma) - c/sigma
            let mut rhs = &lw - &ls + (&lx - &self.target) / sigma;
            rhs += (&u + &v / sigma).component_mul(&split);
            let rhs_copy = rhs.clone();
            self.gram.solve_in_place(&mut rhs);
            y = rhs;
            // L L^* y, read off the normal equations
            let llty = rhs_copy - y.component_mul(&split);

            // (S, u)-block
            let lty = self.adjoint_all(&y);
            let p = w - &lty + &x / sigma;
            let (s_new, xh, f_val, h_val) = self.spectral_step(&p, sigma)?;
            s_mat = s_new;
            x_hat = xh;
            ls = self.apply_all(&s_mat);
            // L(X_hat) = sigma (L(W) - L L^* y - L(S)) + L(X)
            let mut lxh = (&lw - &llty - &ls) * sigma + &lx;
            let mut u_new = (&y - &v / sigma).component_mul(&split);
            self.prox_q(&mut u_new, sigma);
            u = u_new;

            // multipliers
            let mut x_next = &x * (1.0 - tau);
            x_next += &x_hat * tau;
            x = x_next;
            let yu = (&y - &u).component_mul(&split);
            v -= &yu * (tau * sigma);

            let check = it % opts.check_every == 0 || it == opts.max_iters;
            if !check {
                lx = if it % LX_REFRESH == 0 {
                    self.apply_all(&x)
                } else {
                    lx * (1.0 - tau) + &lxh * tau
                };
                continue;
            }
            let (mut viol, mut viol_scaled) = self.primal_violation(&lxh);
            let mut pinf = viol / pscale;
            let dres_mat = (&lty + &s_mat - w).norm_squared();
            let dinf = (dres_mat + self.unscaled_norm_squared(&yu)).sqrt() / dscale;
            if pinf < opts.tol_infeas && dinf < opts.tol_infeas {
                lxh = self.apply_all(&x_hat);
                (viol, viol_scaled) = self.primal_violation(&lxh);
                pinf = viol / pscale;
            }
            lx = if it % LX_REFRESH == 0 {
                self.apply_all(&x)
            } else {
                lx * (1.0 - tau) + &lxh * tau
            };
            let primal_obj = f_val - w.dot(&x_hat);
            let dual_obj = -(self.target_pairing(&y, &u) + self.q_value(&u) + h_val);
            let gap = (primal_obj - dual_obj).abs();
            let rel_gap = gap / (1.0 + primal_obj.abs() + dual_obj.abs());
            let rec = ResidualRecord {
                iteration: it,
                primal_infeas: pinf,
                dual_infeas: dinf,
                gap,
                rel_gap,
                primal_obj,
                dual_obj,
                sigma,
            };
            if opts.record_history {
                history.push(rec.clone());
            }
            last = Some(rec);

            let gap_ok = match opts.gap_mode {
                GapMode::Absolute => gap < opts.tol_gap,
                GapMode::Relative => rel_gap < opts.tol_gap,
            };
            if pinf < opts.tol_infeas && dinf < opts.tol_infeas && gap_ok {
                status = SolveStatus::Converged;
                break;
            }

            // stagnation: primal infeasibility not halved over a full window
            if it >= next_window_check {
                if let Some(prev) = window_pinf {
                    if pinf > 0.5 * prev && pinf > 1e3 * opts.tol_infeas {
                        status = SolveStatus::Stagnated;
                        break;
                    }
                }
                window_pinf = Some(pinf);
                next_window_check += opts.stagnation_window;
            }

            if it % opts.sigma_update_every == 0 {
                let ratio = opts.sigma_balance;
                // balance the residuals relative to the size of the iterates,
                // in the internal units
                let pb = viol_scaled / (1.0 + lxh.norm().max(self.target.norm()));
                let db = (dres_mat + yu.norm_squared()).sqrt()
                    / (1.0 + lty.norm().max(s_mat.norm()).max(w.norm()));
                if pb > ratio * db {
                    sigma /= opts.sigma_factor;
                } else if db > ratio * pb {
                    sigma *= opts.sigma_factor;
                }
                sigma = sigma.clamp(1e-8, 1e8);
            }
        }

        let rec = last.ok_or_else(|| Error::Numerical("solver ran no iterations".into()))?;
        let result = SolveResult {
            x: x_hat,
            iterations,
            primal_infeas: rec.primal_infeas,
            dual_infeas: rec.dual_infeas,
            gap: rec.gap,
            rel_gap: rec.rel_gap,
            primal_obj: rec.primal_obj,
            dual_obj: rec.dual_obj,
            converged: status == SolveStatus::Converged,
            status,
            history: if opts.record_history { Some(history) } else { None },
        };
        let state = AdmmState {
            y: y.as_slice().to_vec(),
            s: s_mat.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            v: v.as_slice().to_vec(),
            x: x.as_slice().to_vec(),
            sigma,
        };
        Ok((result, state))
    }
}
