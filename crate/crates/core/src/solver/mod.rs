//! Per-stage nuclear semi-norm subproblems
//!
//! ```text
//! min ||X||_* - <W_prev, X>  s.t.  ||A(X) - b|| <= delta,  X in Omega
//! ```
//!
//! for the two structure sets supported here: sensing with fixed entries and
//! a spectral-norm ball, and PSD completion with linear equalities and
//! upper bounds. Both are solved by the dual ADMM in [`admm`].

mod admm;
mod problem;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::penalty::SPECTRAL_SLACK;
use crate::spectral::{self, Matrix};

pub use admm::AdmmState;
pub use problem::{FixedEntry, LinearBlock, PsdCompletionProblem, SensingProblem};

use admm::{ConstraintBlock, ConstraintKind, Domain, Engine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// `|primal - dual| < tol_gap`.
    #[default]
    Absolute,
    /// `|primal - dual| / (1 + |primal| + |dual|) < tol_gap`.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol_infeas: f64,
    pub tol_gap: f64,
    pub gap_mode: GapMode,
    pub max_iters: usize,
    pub admm_sigma0: f64,
    /// Multiplier step length, in `(0, (1 + sqrt 5) / 2)`.
    pub step_length: f64,
    pub check_every: usize,
    pub sigma_update_every: usize,
    pub sigma_factor: f64,
    pub sigma_balance: f64,
    pub stagnation_window: usize,
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_infeas: 1e-6,
            tol_gap: 1e-5,
            gap_mode: GapMode::Absolute,
            max_iters: 20_000,
            admm_sigma0: 1.0,
            step_length: 1.618,
            check_every: 1,
            sigma_update_every: 50,
            sigma_factor: 2.0,
            sigma_balance: 5.0,
            stagnation_window: 2_000,
            record_history: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        if !(self.tol_infeas > 0.0 && self.tol_gap > 0.0 && self.admm_sigma0 > 0.0) {
            return Err(invalid("tolerances and initial penalty must be positive"));
        }
        if self.max_iters == 0 || self.check_every == 0 || self.sigma_update_every == 0 || self.stagnation_window == 0 {
            return Err(invalid("iteration counts must be positive"));
        }
        if !(self.step_length > 0.0 && self.step_length < golden) {
            return Err(invalid(format!("step length must lie in (0, {golden}), got {}", self.step_length)));
        }
        if !(self.sigma_factor >= 1.0 && self.sigma_balance >= 1.0) {
            return Err(invalid("penalty adaptation factors must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Stagnated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(with = "crate::matio::json_rows")]
    pub x: Matrix,
    pub iterations: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    /// Absolute duality gap.
    pub gap: f64,
    pub rel_gap: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub converged: bool,
    pub status: SolveStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<ResidualRecord>>,
}

/// `||X||_* - <W_prev, X>`.
pub fn stage_objective(x: &Matrix, w_prev: &Matrix) -> Result<f64> {
    if x.shape() != w_prev.shape() {
        return Err(crate::error::shape_mismatch(
            format!("{:?}", x.shape()),
            format!("{:?}", w_prev.shape()),
        ));
    }
    Ok(spectral::nuclear_norm(x)? - w_prev.dot(x))
}

fn check_weight(w: &Matrix, shape: (usize, usize)) -> Result<()> {
    if w.shape() != shape {
        return Err(crate::error::shape_mismatch(format!("{shape:?}"), format!("{:?}", w.shape())));
    }
    if spectral::spectral_norm(w)? > 1.0 + SPECTRAL_SLACK {
        return Err(invalid("previous weight matrix has spectral norm above 1"));
    }
    Ok(())
}

/// A prepared solver for one problem. The Gram factorization is computed
/// once and reused across stages.
pub struct StageSolver<'a> {
    engine: Engine<'a>,
    shape: (usize, usize),
    psd: bool,
}

impl<'a> StageSolver<'a> {
    pub fn sensing(p: &'a SensingProblem) -> Result<Self> {
        p.validate()?;
        let (fixed_op, d) = p.fixed_operator()?;
        let mut blocks = vec![ConstraintBlock {
            op: Cow::Borrowed(&p.op),
            target: Cow::Borrowed(&p.b),
            kind: ConstraintKind::Ball(p.delta),
        }];
        if !fixed_op.is_empty() {
            blocks.push(ConstraintBlock {
                op: Cow::Owned(fixed_op),
                target: Cow::Owned(d),
                kind: ConstraintKind::Equal,
            });
        }
        let shape = p.shape();
        let engine = Engine::new(shape, Domain::SpectralBall { radius: p.spectral_radius }, blocks)?;
        Ok(Self { engine, shape, psd: false })
    }

    pub fn psd(p: &'a PsdCompletionProblem) -> Result<Self> {
        p.validate()?;
        let mut blocks = vec![ConstraintBlock {
            op: Cow::Borrowed(&p.op),
            target: Cow::Borrowed(&p.b),
            kind: ConstraintKind::Ball(p.delta),
        }];
        if let Some(eq) = &p.eq {
            if !eq.op.is_empty() {
                blocks.push(ConstraintBlock {
                    op: Cow::Borrowed(&eq.op),
                    target: Cow::Borrowed(&eq.rhs),
                    kind: ConstraintKind::Equal,
                });
            }
        }
        if let Some(ineq) = &p.ineq {
            if !ineq.op.is_empty() {
                blocks.push(ConstraintBlock {
                    op: Cow::Borrowed(&ineq.op),
                    target: Cow::Borrowed(&ineq.rhs),
                    kind: ConstraintKind::Upper,
                });
            }
        }
        let shape = (p.n, p.n);
        let engine = Engine::new(shape, Domain::Psd, blocks)?;
        Ok(Self { engine, shape, psd: true })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// Solves the stage problem with weight `w_prev`, optionally warm
    /// started from a previous state.
    pub fn solve(
        &self,
        w_prev: &Matrix,
        opts: &SolveOptions,
        warm: Option<&AdmmState>,
    ) -> Result<(SolveResult, AdmmState)> {
        check_weight(w_prev, self.shape)?;
        let w = if self.psd {
            spectral::symmetrize(w_prev)?
        } else {
            w_prev.clone()
        };
        // the linear cost is C = W for sensing and C = I - W on the PSD cone
        let c_norm = if self.psd {
            (Matrix::identity(self.shape.0, self.shape.1) - &w).norm()
        } else {
            w.norm()
        };
        self.engine.solve(&w, c_norm, opts, warm)
    }
}

/// One sensing stage: `min ||X||_* - <W_prev, X>` subject to the sensing
/// constraints, from a cold start.
pub fn solve_sensing_stage(p: &SensingProblem, w_prev: &Matrix, opts: &SolveOptions) -> Result<SolveResult> {
    Ok(StageSolver::sensing(p)?.solve(w_prev, opts, None)?.0)
}

/// One PSD completion stage: `min <I - W_prev, X>` over the PSD structure
/// set, from a cold start.
pub fn solve_psd_stage(p: &PsdCompletionProblem, w_prev: &Matrix, opts: &SolveOptions) -> Result<SolveResult> {
    Ok(StageSolver::psd(p)?.solve(w_prev, opts, None)?.0)
}
