//! Command-line front end: `gen`, `solve`, `grid`, `bounds`, `rec-estimate`.
//!
//! Every configuration is a JSON file. Exit codes: 0 on success, 2 when
//! some grid points or stages failed, 1 on invalid input or any other
//! error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiments::{self, GeneratorSpec, GridSpec, Profile};
use crate::multistage::{run_multistage, MultistageConfig, MultistageResult, Problem, StopReason};
use crate::operator::SamplingOperator;
use crate::penalty::PhiSpec;
use crate::theory::{self, RECParams, Rho1Choice, GAMMA0};

#[derive(Debug, Parser)]
#[command(name = "msrelax", version, about = "Multi-stage convex relaxation for low-rank matrix recovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a problem instance from a generator spec.
    Gen {
        /// Generator spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for problem.json.
        #[arg(long)]
        out: PathBuf,
        /// Store the dense operator and ground truth as binary files.
        #[arg(long)]
        binary: bool,
    },
    /// Run the multi-stage method on one instance.
    Solve {
        /// Problem envelope written by `gen`.
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        problem: Option<PathBuf>,
        /// Generator spec; the instance is generated in memory.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Multi-stage configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for result.json and stages.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep over seeds and a generator parameter.
    Grid {
        /// Grid spec (JSON).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        grid: Option<PathBuf>,
        /// Named sweep: stages, nu, correlation or covariance.
        #[arg(long)]
        preset: Option<String>,
        /// Use the full-size preset instead of the desk-scale one.
        #[arg(long)]
        full: bool,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the theoretical error-bound reduction ratios.
    Bounds {
        /// Bounds config (JSON); defaults reproduce the phi_1 table.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate restricted eigenvalues of a sensing operator.
    RecEstimate {
        /// Problem envelope or bare operator JSON.
        #[arg(long)]
        operator: PathBuf,
        /// Rank level.
        #[arg(long)]
        k: usize,
        /// Random starts per extreme; the lower extreme has many local minima.
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// With `--s` and `--c`: also check the growth condition using
        /// estimates at rank levels `s` and `2r + 2s`.
        #[arg(long, requires_all = ["s", "c"])]
        r: Option<usize>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
    },
}

/// Input of the `bounds` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub r: usize,
    pub s: usize,
    pub c: Vec<f64>,
    /// `sigma_r(X_bar) / Xi(gamma_0)`; ignored when `sigma_r` is set.
    pub alpha: f64,
    /// Absolute `sigma_r(X_bar)`, used with `delta` and `theta_*`.
    pub sigma_r: Option<f64>,
    pub delta: f64,
    pub theta_plus: f64,
    pub theta_minus: f64,
    pub phi: PhiSpec,
    /// Defaults to the midpoint of the tabulated interval for `phi`.
    pub rho1: Option<Rho1Choice>,
    /// `mu_2, mu_3, ...`; empty means `mu = 1`.
    pub mu: Vec<f64>,
    pub stages: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            r: 10,
            s: 5,
            c: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9],
            alpha: 4.5,
            sigma_r: None,
            delta: 0.5,
            theta_plus: 1.0,
            theta_minus: 1.0,
            phi: PhiSpec::Phi1,
            rho1: None,
            mu: Vec::new(),
            stages: 4,
        }
    }
}

/// One column of the bounds table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsColumn {
    pub c: f64,
    pub alpha: f64,
    pub ratios: Vec<f64>,
    pub floor: f64,
    /// Admissible `rho_1 Xi(gamma_0)` range, if any.
    pub rho1_interval: Option<(f64, f64)>,
    pub varrho: Option<f64>,
    pub k_bar: Option<usize>,
    pub diagnostic: Option<String>,
}

/// Computes the bounds table column by column.
pub fn bounds_table(cfg: &BoundsConfig) -> Result<Vec<BoundsColumn>> {
    if cfg.c.is_empty() || cfg.stages == 0 {
        return Err(invalid("bounds need a nonempty c grid and at least one stage"));
    }
    let rule = cfg.rho1.unwrap_or_else(|| Rho1Choice::table_default(&cfg.phi));
    let mut out = Vec::with_capacity(cfg.c.len());
    for &c in &cfg.c {
        let alpha = match cfg.sigma_r {
            Some(sr) => {
                let p = RECParams {
                    r: cfg.r,
                    s: cfg.s,
                    c,
                    theta_plus: cfg.theta_plus,
                    theta_minus: cfg.theta_minus,
                    delta: cfg.delta,
                    sigma_r_bar: None,
                    n: None,
                };
                p.validate()?;
                sr / theory::xi(&p, GAMMA0)?
            }
            None => cfg.alpha,
        };
        let table = theory::ratio_table(&cfg.phi, cfg.r, cfg.s, &[c], alpha, rule, &cfg.mu, cfg.stages)?;
        let p = RECParams::normalized(cfg.r, cfg.s, c, alpha)?;
        let x0 = theory::xi(&p, GAMMA0)?;
        let adm = theory::rho1_admissible(&p, &cfg.phi)?;
        let seq = theory::gamma_tilde_recursion(&p, &cfg.phi, rule.factor() / x0, &[], 1)?;
        let (varrho, k_bar, diagnostic) = match theory::geometric_bound(&p, &seq, 0.0, 1) {
            Ok(g) => (Some(g.varrho), Some(g.k_bar), adm.diagnostic),
            Err(e) => (None, None, Some(e.to_string())),
        };
        out.push(BoundsColumn {
            c,
            alpha,
            ratios: table.ratios.iter().map(|row| row[0]).collect(),
            floor: table.floor[0],
            rho1_interval: adm.interval.map(|(lo, hi)| (lo * x0, hi * x0)),
            varrho,
            k_bar,
            diagnostic,
        });
    }
    Ok(out)
}

/// Writes the table with one row per quantity and one column per `c`.
pub fn write_bounds_csv<W: Write>(cols: &[BoundsColumn], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["quantity".to_string()];
    header.extend(cols.iter().map(|c| format!("c={}", c.c)));
    out.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let stages = cols.first().map_or(0, |c| c.ratios.len());
    for k in 0..stages {
        let mut row = vec![format!("xi_ratio_{}", k + 1)];
        row.extend(cols.iter().map(|c| fmt(Some(c.ratios[k]))));
        out.write_record(&row)?;
    }
    let rows: [(&str, Box<dyn Fn(&BoundsColumn) -> Option<f64>>); 6] = [
        ("floor", Box::new(|c| Some(c.floor))),
        ("alpha", Box::new(|c| Some(c.alpha))),
        ("rho1_lo", Box::new(|c| c.rho1_interval.map(|i| i.0))),
        ("rho1_hi", Box::new(|c| c.rho1_interval.map(|i| i.1))),
        ("varrho", Box::new(|c| c.varrho)),
        ("k_bar", Box::new(|c| c.k_bar.map(|k| k as f64))),
    ];
    for (name, f) in rows.iter() {
        let mut row = vec![name.to_string()];
        if *name == "k_bar" {
            row.extend(cols.iter().map(|c| f(c).map_or(String::new(), |v| format!("{v:.0}"))));
        } else {
            row.extend(cols.iter().map(|c| fmt(f(c))));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn load_operator(path: &Path) -> Result<SamplingOperator> {
    if let Ok(loaded) = experiments::load_problem(path) {
        return Ok(match loaded.problem {
            Problem::Sensing(p) => p.op,
            Problem::Psd(p) => p.op,
        });
    }
    let op: SamplingOperator = read_json(path)?;
    op.validate()?;
    Ok(op)
}

#[derive(Serialize)]
struct StageCsvRow {
    k: usize,
    rho: f64,
    relerr: Option<f64>,
    rank: usize,
    iterations: usize,
    cumulative_iterations: usize,
    converged: bool,
    primal_infeas: f64,
    dual_infeas: f64,
    gap: f64,
    penalty_objective: f64,
    wall_time_s: f64,
}

fn write_solve_outputs(result: &MultistageResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("result.json"), serde_json::to_vec_pretty(result)?)?;
    let mut w = csv::Writer::from_path(dir.join("stages.csv"))?;
    for s in &result.stages {
        w.serialize(StageCsvRow {
            k: s.k,
            rho: s.rho,
            relerr: s.relerr,
            rank: s.rank,
            iterations: s.solver_iterations,
            cumulative_iterations: s.cumulative_iterations,
            converged: s.converged,
            primal_infeas: s.primal_infeas,
            dual_infeas: s.dual_infeas,
            gap: s.gap,
            penalty_objective: s.penalty_objective,
            wall_time_s: s.wall_time_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome class of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Gen { spec, out, binary } => {
            let spec: GeneratorSpec = read_json(&spec)?;
            spec.validate()?;
            let (problem, xbar) = experiments::generate(&spec)?;
            let path = experiments::save_problem(&out, &problem, Some(&xbar), Some(&spec), binary)?;
            println!("{}", path.display());
            Ok(Outcome::Success)
        }
        Command::Solve { problem, spec, config, out } => {
            let cfg: MultistageConfig = match config {
                Some(p) => read_json(&p)?,
                None => MultistageConfig::default(),
            };
            cfg.validate()?;
            let (problem, truth) = match (problem, spec) {
                (Some(p), _) => {
                    let loaded = experiments::load_problem(&p)?;
                    (loaded.problem, loaded.ground_truth)
                }
                (None, Some(s)) => {
                    let spec: GeneratorSpec = read_json(&s)?;
                    spec.validate()?;
                    let (p, x) = experiments::generate(&spec)?;
                    (p, Some(x))
                }
                (None, None) => return Err(invalid("either --problem or --spec is required")),
            };
            let result = run_multistage(&problem, &cfg, truth.as_ref())?;
            println!("k\trho\trelerr\trank\titer\tcum_iter\tconverged");
            for s in &result.stages {
                let relerr = s.relerr.map_or("-".to_string(), |v| format!("{v:.4e}"));
                println!(
                    "{}\t{:.4e}\t{}\t{}\t{}\t{}\t{}",
                    s.k, s.rho, relerr, s.rank, s.solver_iterations, s.cumulative_iterations, s.converged
                );
            }
            println!("stop: {:?}", result.stop_reason);
            if let Some(dir) = out {
                write_solve_outputs(&result, &dir)?;
            }
            let partial = !result.all_converged() || result.stop_reason == StopReason::SolverFailure;
            Ok(if partial { Outcome::Partial } else { Outcome::Success })
        }
        Command::Grid { grid, preset, full, workers, out } => {
            let mut spec: GridSpec = match (grid, preset) {
                (Some(p), _) => read_json(&p)?,
                (None, Some(name)) => {
                    experiments::preset(&name, if full { Profile::Full } else { Profile::Desk })?
                }
                (None, None) => return Err(invalid("either --grid or --preset is required")),
            };
            if workers.is_some() {
                spec.workers = workers;
            }
            let outcome = experiments::run_grid(&spec, Some(&out))?;
            let failures = outcome.failures();
            println!("{} points, {} failed; outputs in {}", outcome.records.len(), failures, out.display());
            for r in outcome.records.iter().filter(|r| r.error.is_some()) {
                eprintln!("seed {} axis {:?}: {}", r.spec.seed, r.axis_value, r.error.as_deref().unwrap_or(""));
            }
            Ok(if failures > 0 { Outcome::Partial } else { Outcome::Success })
        }
        Command::Bounds { config, out } => {
            let cfg: BoundsConfig = match config {
                Some(p) => read_json(&p)?,
                None => BoundsConfig::default(),
            };
            let cols = bounds_table(&cfg)?;
            match out {
                Some(p) => write_bounds_csv(&cols, fs::File::create(p)?)?,
                None => write_bounds_csv(&cols, std::io::stdout().lock())?,
            }
            Ok(Outcome::Success)
        }
        Command::RecEstimate { operator, k, trials, seed, r, s, c } => {
            let op = load_operator(&operator)?;
            let est = theory::estimate_restricted_eigs(&op, k, trials, seed)?;
            let mut report = serde_json::json!({ "estimate": est });
            if let (Some(r), Some(s), Some(c)) = (r, s, c) {
                let plus = theory::estimate_restricted_eigs(&op, s, trials, seed)?;
                let minus = theory::estimate_restricted_eigs(&op, 2 * r + 2 * s, trials, seed)?;
                let check = theory::assumption_check(plus.theta_plus, minus.theta_minus, r, s, c)?;
                report["assumption"] = serde_json::json!({
                    "theta_plus_s": plus.theta_plus,
                    "theta_minus_2r2s": minus.theta_minus,
                    "check": check,
                });
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(Outcome::Success)
        }
    }
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
