//! The multi-stage convex relaxation loop: solve a nuclear semi-norm stage,
//! update the weight matrix from the new iterate, raise the penalty
//! parameter, repeat.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};
use crate::matio;
use crate::penalty::{self, BoundaryRule, PhiSpec};
use crate::solver::{
    stage_objective, AdmmState, PsdCompletionProblem, SensingProblem, SolveOptions, SolveStatus, StageSolver,
};
use crate::spectral::{self, Matrix};

pub use crate::spectral::numerical_rank;

/// How the first penalty parameter is chosen once `X^1` is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rho1Rule {
    Fixed { value: f64 },
    /// `rho_1 = c0 / ||X^1||`.
    Scaled { c0: f64 },
}

impl Default for Rho1Rule {
    fn default() -> Self {
        Rho1Rule::Scaled { c0: 10.0 }
    }
}

/// Ratio factors `mu_k >= 1` with `rho_k = mu_k rho_{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MuRule {
    Constant { mu: f64 },
    /// `values[0]` is `mu_2`, `values[1]` is `mu_3`, ...; the last value
    /// repeats once the list runs out.
    Schedule { values: Vec<f64> },
}

impl Default for MuRule {
    fn default() -> Self {
        MuRule::Constant { mu: 1.25 }
    }
}

impl MuRule {
    /// `mu_k` for `k >= 2`.
    pub fn mu(&self, k: usize) -> f64 {
        match self {
            MuRule::Constant { mu } => *mu,
            MuRule::Schedule { values } => {
                let i = k.saturating_sub(2).min(values.len().saturating_sub(1));
                values[i]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            MuRule::Constant { mu } => *mu >= 1.0 && mu.is_finite(),
            MuRule::Schedule { values } => !values.is_empty() && values.iter().all(|m| *m >= 1.0 && m.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("ratio factors must be finite and >= 1"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Rank stability for PSD completion, a fixed stage count for sensing.
    #[default]
    Auto,
    /// Run exactly `max_stages` stages.
    FixedStages,
    /// Stop once the last `stop_rank_stability` iterates share one rank.
    RankStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultistageConfig {
    pub phi: PhiSpec,
    pub rho1_rule: Rho1Rule,
    pub mu_rule: MuRule,
    pub max_stages: usize,
    pub stop_rule: StopRule,
    pub stop_rank_stability: usize,
    pub boundary_rule: BoundaryRule,
    pub solver_opts: SolveOptions,
    /// Start each stage from the previous stage's iterate and multipliers.
    pub warm_start: bool,
    /// End the run at the first stage whose solver does not converge.
    pub abort_on_nonconvergence: bool,
    /// Keep every stage iterate in the trace.
    pub keep_iterates: bool,
    /// Write every stage iterate to this directory as a binary matrix file.
    pub iterate_dir: Option<PathBuf>,
}

impl Default for MultistageConfig {
    fn default() -> Self {
        Self {
            phi: PhiSpec::default(),
            rho1_rule: Rho1Rule::default(),
            mu_rule: MuRule::default(),
            max_stages: 15,
            stop_rule: StopRule::Auto,
            stop_rank_stability: 3,
            boundary_rule: BoundaryRule::default(),
            solver_opts: SolveOptions::default(),
            warm_start: true,
            abort_on_nonconvergence: false,
            keep_iterates: false,
            iterate_dir: None,
        }
    }
}

impl MultistageConfig {
    pub fn validate(&self) -> Result<()> {
        self.phi.validate()?;
        self.mu_rule.validate()?;
        self.solver_opts.validate()?;
        if self.max_stages == 0 {
            return Err(invalid("max_stages must be at least 1"));
        }
        if self.stop_rank_stability < 2 {
            return Err(invalid("the rank-stability window must be at least 2"));
        }
        match self.rho1_rule {
            Rho1Rule::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                Err(invalid("fixed rho_1 must be positive"))
            }
            Rho1Rule::Scaled { c0 } if !(c0 > 0.0 && c0.is_finite()) => Err(invalid("rho_1 scale must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Problem {
    Sensing(SensingProblem),
    Psd(PsdCompletionProblem),
}

impl Problem {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Problem::Sensing(p) => p.shape(),
            Problem::Psd(p) => (p.n, p.n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Problem::Sensing(p) => p.validate(),
            Problem::Psd(p) => p.validate(),
        }
    }

    fn is_psd(&self) -> bool {
        matches!(self, Problem::Psd(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTrace {
    pub k: usize,
    /// `rho_k`, used for the weight update that closes this stage.
    pub rho: f64,
    pub relerr: Option<f64>,
    pub rank: usize,
    pub solver_iterations: usize,
    pub cumulative_iterations: usize,
    pub converged: bool,
    pub status: SolveStatus,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub gap: f64,
    /// `||X^k||_* - <W^{k-1}, X^k>`.
    pub stage_objective: f64,
    /// Penalty objective at `(X^k, W^{k-1})` with `rho_k`.
    pub penalty_before_update: f64,
    /// Penalty objective at `(X^k, W^k)` with `rho_k`.
    pub penalty_objective: f64,
    /// `||X^k||_* - <W^k, X^k>`.
    pub complementarity: f64,
    pub nuclear_norm: f64,
    pub spectral_norm: f64,
    pub wall_time_s: f64,
    #[serde(default, with = "crate::matio::opt_json_rows", skip_serializing_if = "Option::is_none")]
    pub x: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxStages,
    RankStable,
    SolverFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistageResult {
    pub stages: Vec<StageTrace>,
    pub stop_reason: StopReason,
    #[serde(with = "crate::matio::json_rows")]
    pub x_final: Matrix,
}

impl MultistageResult {
    pub fn final_stage(&self) -> &StageTrace {
        self.stages.last().expect("a run has at least one stage")
    }

    /// Whether every stage solver converged.
    pub fn all_converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }
}

/// `||X - X_bar||_F / ||X_bar||_F`.
pub fn relative_error(x: &Matrix, xbar: &Matrix) -> Result<f64> {
    if x.shape() != xbar.shape() {
        return Err(shape_mismatch(format!("{:?}", xbar.shape()), format!("{:?}", x.shape())));
    }
    let denom = xbar.norm();
    if denom == 0.0 {
        return Err(invalid("relative error against a zero ground truth"));
    }
    Ok((x - xbar).norm() / denom)
}

/// Runs the stage loop on `problem` and returns the full trace.
pub fn run_multistage(
    problem: &Problem,
    cfg: &MultistageConfig,
    ground_truth: Option<&Matrix>,
) -> Result<MultistageResult> {
    cfg.validate()?;
    let shape = problem.shape();
    if let Some(g) = ground_truth {
        if g.shape() != shape {
            return Err(shape_mismatch(format!("{shape:?}"), format!("{:?}", g.shape())));
        }
        if g.norm() == 0.0 {
            return Err(invalid("relative error against a zero ground truth"));
        }
    }
    let solver = match problem {
        Problem::Sensing(p) => StageSolver::sensing(p)?,
        Problem::Psd(p) => StageSolver::psd(p)?,
    };
    let psd = problem.is_psd();
    let rank_stop = match cfg.stop_rule {
        StopRule::Auto => psd,
        StopRule::FixedStages => false,
        StopRule::RankStability => true,
    };
    if let Some(dir) = &cfg.iterate_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut w_prev = Matrix::zeros(shape.0, shape.1);
    let mut rho = 0.0;
    let mut warm: Option<AdmmState> = None;
    let mut stages: Vec<StageTrace> = Vec::new();
    let mut cumulative = 0;
    let mut stop_reason = StopReason::MaxStages;
    let mut x_final = Matrix::zeros(shape.0, shape.1);

    for k in 1..=cfg.max_stages {
        let start = Instant::now();
        let (res, state) = solver.solve(&w_prev, &cfg.solver_opts, if cfg.warm_start { warm.as_ref() } else { None })?;
        warm = Some(state);
        cumulative += res.iterations;
        let x = res.x;
        let nuclear = spectral::nuclear_norm(&x)?;
        let spec_norm = spectral::spectral_norm(&x)?;

        rho = if k == 1 {
            match cfg.rho1_rule {
                Rho1Rule::Fixed { value } => value,
                Rho1Rule::Scaled { c0 } => {
                    if spec_norm == 0.0 {
                        return Err(invalid("first-stage iterate is zero; rho_1 = c0 / ||X^1|| is undefined"));
                    }
                    c0 / spec_norm
                }
            }
        } else {
            rho * cfg.mu_rule.mu(k)
        };

        let update = if psd {
            penalty::w_update_psd(&cfg.phi, &x, rho, cfg.boundary_rule)?
        } else {
            penalty::w_update(&cfg.phi, &x, rho, cfg.boundary_rule)?
        };
        let stage_obj = stage_objective(&x, &w_prev)?;
        let penalty_before = penalty::penalty_objective(&cfg.phi, &x, &w_prev, rho)?;
        let penalty_after = penalty::penalty_objective(&cfg.phi, &x, &update.w, rho)?;
        let compl = penalty::complementarity(&x, &update.w)?;
        let rank = numerical_rank(&x)?;
        let relerr = ground_truth.map(|g| relative_error(&x, g)).transpose()?;

        let x_path = match &cfg.iterate_dir {
            Some(dir) => {
                let path = dir.join(format!("stage_{k:03}.bin"));
                matio::write_matrix(&path, &x, true)?;
                Some(path)
            }
            None => None,
        };

        stages.push(StageTrace {
            k,
            rho,
            relerr,
            rank,
            solver_iterations: res.iterations,
            cumulative_iterations: cumulative,
            converged: res.converged,
            status: res.status,
            primal_infeas: res.primal_infeas,
            dual_infeas: res.dual_infeas,
            gap: res.gap,
            stage_objective: stage_obj,
            penalty_before_update: penalty_before,
            penalty_objective: penalty_after,
            complementarity: compl,
            nuclear_norm: nuclear,
            spectral_norm: spec_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
            x: cfg.keep_iterates.then(|| x.clone()),
            x_path,
        });
        x_final = x;
        w_prev = update.w;

        if !res.converged && cfg.abort_on_nonconvergence {
            stop_reason = StopReason::SolverFailure;
            break;
        }
        let window = cfg.stop_rank_stability;
        if rank_stop && stages.len() >= window {
            let tail = &stages[stages.len() - window..];
            if tail.iter().all(|s| s.rank == rank) {
                stop_reason = StopReason::RankStable;
                break;
            }
        }
    }

    Ok(MultistageResult {
        stages,
        stop_reason,
        x_final,
    })
}
