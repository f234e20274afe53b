//! Parameter sweeps over generated instances, with CSV and JSON outputs.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::generate::{
    dof_matched_ratio, eigen_ratio, gen_correlation, gen_covariance, gen_sensing, GeneratorKind, GeneratorSpec,
};
use crate::error::{invalid, Result};
use crate::multistage::{run_multistage, MultistageConfig, MultistageResult, Problem, StopReason, StopRule};
use crate::solver::SolveStatus;
use crate::spectral::Matrix;

/// Builds the problem and ground truth described by `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<(Problem, Matrix)> {
    Ok(match spec.kind {
        GeneratorKind::Sensing => {
            let g = gen_sensing(spec)?;
            (Problem::Sensing(g.problem), g.xbar)
        }
        GeneratorKind::Correlation => {
            let g = gen_correlation(spec)?;
            (Problem::Psd(g.problem), g.xbar)
        }
        GeneratorKind::Covariance => {
            let g = gen_covariance(spec)?;
            (Problem::Psd(g.problem), g.xbar)
        }
    })
}

/// The generator parameter varied across grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", content = "values", rename_all = "snake_case")]
pub enum GridAxis {
    Nu(Vec<f64>),
    SampleRatio(Vec<f64>),
    M(Vec<usize>),
}

impl GridAxis {
    fn len(&self) -> usize {
        match self {
            GridAxis::Nu(v) | GridAxis::SampleRatio(v) => v.len(),
            GridAxis::M(v) => v.len(),
        }
    }

    fn apply(&self, i: usize, spec: &mut GeneratorSpec) -> f64 {
        match self {
            GridAxis::Nu(v) => {
                spec.nu = Some(v[i]);
                spec.m = None;
                spec.sample_ratio = None;
                v[i]
            }
            GridAxis::SampleRatio(v) => {
                spec.sample_ratio = Some(v[i]);
                spec.m = None;
                spec.nu = None;
                v[i]
            }
            GridAxis::M(v) => {
                spec.m = Some(v[i]);
                spec.nu = None;
                spec.sample_ratio = None;
                v[i] as f64
            }
        }
    }
}

/// A sweep: every axis value crossed with every seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub base: GeneratorSpec,
    #[serde(default)]
    pub axis: Option<GridAxis>,
    /// Replicate seeds; empty means the base seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub config: MultistageConfig,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// One grid point: the concrete generator spec and its axis value.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub spec: GeneratorSpec,
    pub axis_value: Option<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if let Some(axis) = &self.axis {
            if axis.len() == 0 {
                return Err(invalid("grid axis has no values"));
            }
        }
        if self.workers == Some(0) {
            return Err(invalid("worker count must be positive"));
        }
        for p in self.points() {
            p.spec.validate()?;
        }
        Ok(())
    }

    /// Grid points in axis-major, seed-minor order.
    pub fn points(&self) -> Vec<GridPoint> {
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        let n_axis = self.axis.as_ref().map_or(1, GridAxis::len);
        let mut out = Vec::with_capacity(n_axis * seeds.len());
        for i in 0..n_axis {
            for &seed in &seeds {
                let mut spec = self.base.clone();
                spec.seed = seed;
                let axis_value = self.axis.as_ref().map(|a| a.apply(i, &mut spec));
                out.push(GridPoint { spec, axis_value });
            }
        }
        out
    }
}

/// Per-stage summary kept in experiment records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub k: usize,
    pub rho: f64,
    pub relerr: Option<f64>,
    pub rank: usize,
    pub iterations: usize,
    pub cumulative_iterations: usize,
    pub converged: bool,
    pub status: SolveStatus,
    pub penalty_objective: f64,
    pub wall_time_s: f64,
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub spec: GeneratorSpec,
    pub axis_value: Option<f64>,
    pub config: MultistageConfig,
    /// Measurement count of the generated instance.
    pub m: Option<usize>,
    /// `lambda_1 / lambda_r` of a symmetric ground truth.
    pub eigr: Option<f64>,
    pub stages: Vec<StageSummary>,
    pub stop_reason: Option<StopReason>,
    /// Index of the last stage that ran.
    pub final_stage: Option<usize>,
    pub generate_time_s: f64,
    pub total_time_s: f64,
    /// Set when the point failed; the other fields are then partial.
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn stage(&self, k: usize) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.k == k)
    }

    pub fn final_summary(&self) -> Option<&StageSummary> {
        self.stages.last()
    }

    /// The record with every wall time zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.generate_time_s = 0.0;
        r.total_time_s = 0.0;
        for s in &mut r.stages {
            s.wall_time_s = 0.0;
        }
        r
    }
}

fn summarize(result: &MultistageResult) -> Vec<StageSummary> {
    result
        .stages
        .iter()
        .map(|s| StageSummary {
            k: s.k,
            rho: s.rho,
            relerr: s.relerr,
            rank: s.rank,
            iterations: s.solver_iterations,
            cumulative_iterations: s.cumulative_iterations,
            converged: s.converged,
            status: s.status,
            penalty_objective: s.penalty_objective,
            wall_time_s: s.wall_time_s,
        })
        .collect()
}

/// Generates and solves one point; failures are captured in the record.
pub fn run_point(point: &GridPoint, cfg: &MultistageConfig) -> ExperimentRecord {
    let start = Instant::now();
    let mut rec = ExperimentRecord {
        spec: point.spec.clone(),
        axis_value: point.axis_value,
        config: cfg.clone(),
        m: None,
        eigr: None,
        stages: Vec::new(),
        stop_reason: None,
        final_stage: None,
        generate_time_s: 0.0,
        total_time_s: 0.0,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let (problem, xbar) = generate(&point.spec)?;
        rec.generate_time_s = start.elapsed().as_secs_f64();
        rec.m = Some(match &problem {
            Problem::Sensing(p) => p.op.len(),
            Problem::Psd(p) => p.op.len(),
        });
        if point.spec.kind != GeneratorKind::Sensing {
            rec.eigr = Some(eigen_ratio(&xbar, point.spec.r)?);
        }
        let result = run_multistage(&problem, cfg, Some(&xbar))?;
        rec.stages = summarize(&result);
        rec.stop_reason = Some(result.stop_reason);
        rec.final_stage = Some(result.final_stage().k);
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.error = Some(e.to_string());
    }
    rec.total_time_s = start.elapsed().as_secs_f64();
    rec
}

/// Records of a sweep, in grid-point order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub records: Vec<ExperimentRecord>,
}

impl GridOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Runs every grid point on a worker pool. Each worker owns its solver and
/// the per-point seeds fix every random draw, so the records do not depend
/// on scheduling. When `out_dir` is given the records and figure data are
/// written there.
pub fn run_grid(grid: &GridSpec, out_dir: Option<&Path>) -> Result<GridOutcome> {
    grid.validate()?;
    let points = grid.points();
    let workers = grid
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(points.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ExperimentRecord>>> = Mutex::new(vec![None; points.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let rec = run_point(&points[i], &grid.config);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(rec);
            });
        }
    });
    let records = slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect();
    let outcome = GridOutcome { records };
    if let Some(dir) = out_dir {
        write_outputs(&outcome.records, dir)?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct StageRow {
    point: usize,
    axis_value: Option<f64>,
    seed: u64,
    k: usize,
    rho: f64,
    relerr: Option<f64>,
    rank: usize,
    iterations: usize,
    cumulative_iterations: usize,
    converged: bool,
    penalty_objective: f64,
    wall_time_s: f64,
}

/// Tables 2-3 style row: first stage, first two stages, final result.
#[derive(Serialize)]
struct SummaryRow {
    point: usize,
    axis_value: Option<f64>,
    seed: u64,
    m: Option<usize>,
    eigr: Option<f64>,
    stage1_relerr: Option<f64>,
    stage1_rank: Option<usize>,
    stage1_iter: Option<usize>,
    stage2_relerr: Option<f64>,
    stage2_rank: Option<usize>,
    stage2_iter_cumulative: Option<usize>,
    final_stage: Option<usize>,
    final_relerr: Option<f64>,
    final_rank: Option<usize>,
    final_iter_cumulative: Option<usize>,
    stop_reason: Option<StopReason>,
    total_time_s: f64,
    error: Option<String>,
}

#[derive(Serialize)]
struct Fig1Row {
    axis_value: Option<f64>,
    k: usize,
    median_relerr: Option<f64>,
    median_rank: f64,
    runs: usize,
}

#[derive(Serialize)]
struct Fig2Row {
    axis_value: Option<f64>,
    mean_relerr_first: Option<f64>,
    mean_relerr_final: Option<f64>,
    mean_rank_first: f64,
    mean_rank_final: f64,
    runs: usize,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Distinct axis values in first-seen order (`None` for axis-free grids).
fn axis_groups(records: &[ExperimentRecord]) -> Vec<(Option<f64>, Vec<&ExperimentRecord>)> {
    let mut groups: Vec<(Option<f64>, Vec<&ExperimentRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        match groups.iter_mut().find(|(v, _)| *v == r.axis_value) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.axis_value, vec![r])),
        }
    }
    groups
}

/// Writes `records.json`, `stages.csv`, `summary.csv`, and the figure data
/// `fig_stages.csv` (median relerr per stage) and `fig_axis.csv` (first vs
/// final stage per axis value).
pub fn write_outputs(records: &[ExperimentRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("records.json"), serde_json::to_string_pretty(records)?)?;

    let mut w = csv::Writer::from_path(dir.join("stages.csv"))?;
    for (i, r) in records.iter().enumerate() {
        for s in &r.stages {
            w.serialize(StageRow {
                point: i,
                axis_value: r.axis_value,
                seed: r.spec.seed,
                k: s.k,
                rho: s.rho,
                relerr: s.relerr,
                rank: s.rank,
                iterations: s.iterations,
                cumulative_iterations: s.cumulative_iterations,
                converged: s.converged,
                penalty_objective: s.penalty_objective,
                wall_time_s: s.wall_time_s,
            })?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for (i, r) in records.iter().enumerate() {
        let (s1, s2, fin) = (r.stage(1), r.stage(2), r.final_summary());
        w.serialize(SummaryRow {
            point: i,
            axis_value: r.axis_value,
            seed: r.spec.seed,
            m: r.m,
            eigr: r.eigr,
            stage1_relerr: s1.and_then(|s| s.relerr),
            stage1_rank: s1.map(|s| s.rank),
            stage1_iter: s1.map(|s| s.iterations),
            stage2_relerr: s2.and_then(|s| s.relerr),
            stage2_rank: s2.map(|s| s.rank),
            stage2_iter_cumulative: s2.map(|s| s.cumulative_iterations),
            final_stage: r.final_stage,
            final_relerr: fin.and_then(|s| s.relerr),
            final_rank: fin.map(|s| s.rank),
            final_iter_cumulative: fin.map(|s| s.cumulative_iterations),
            stop_reason: r.stop_reason,
            total_time_s: r.total_time_s,
            error: r.error.clone(),
        })?;
    }
    w.flush()?;

    let groups = axis_groups(records);
    let mut w = csv::Writer::from_path(dir.join("fig_stages.csv"))?;
    for (axis_value, recs) in &groups {
        let max_k = recs.iter().filter_map(|r| r.final_stage).max().unwrap_or(0);
        for k in 1..=max_k {
            let at_k: Vec<&StageSummary> = recs.iter().filter_map(|r| r.stage(k)).collect();
            w.serialize(Fig1Row {
                axis_value: *axis_value,
                k,
                median_relerr: median(at_k.iter().filter_map(|s| s.relerr).collect()),
                median_rank: median(at_k.iter().map(|s| s.rank as f64).collect()).unwrap_or(f64::NAN),
                runs: at_k.len(),
            })?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("fig_axis.csv"))?;
    for (axis_value, recs) in &groups {
        let firsts: Vec<&StageSummary> = recs.iter().filter_map(|r| r.stage(1)).collect();
        let finals: Vec<&StageSummary> = recs.iter().filter_map(|r| r.final_summary()).collect();
        let relerrs = |v: &[&StageSummary]| v.iter().filter_map(|s| s.relerr).collect::<Vec<_>>();
        let ranks = |v: &[&StageSummary]| v.iter().map(|s| s.rank as f64).collect::<Vec<_>>();
        w.serialize(Fig2Row {
            axis_value: *axis_value,
            mean_relerr_first: mean(&relerrs(&firsts)),
            mean_relerr_final: mean(&relerrs(&finals)),
            mean_rank_first: mean(&ranks(&firsts)).unwrap_or(f64::NAN),
            mean_rank_final: mean(&ranks(&finals)).unwrap_or(f64::NAN),
            runs: recs.len(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Named sweeps. `desk` profiles run in minutes on one core; `full`
/// profiles use the original problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Full,
}

/// Known preset names for [`preset`].
pub const PRESETS: [&str; 4] = ["stages", "nu", "correlation", "covariance"];

/// Builds a named sweep:
/// - `stages`: one sensing sweep of fifteen stages over ten seeds;
/// - `nu`: sensing over `nu` in `[1, 3]`, first versus fifth stage;
/// - `correlation`, `covariance`: PSD completion with rank-stability stopping.
pub fn preset(name: &str, profile: Profile) -> Result<GridSpec> {
    let full = profile == Profile::Full;
    let seeds = |n: u64| (1..=n).collect::<Vec<_>>();
    let mut config = MultistageConfig::default();
    let grid = match name {
        "stages" => {
            let n = if full { 100 } else { 40 };
            let r = if full { 5 } else { 3 };
            config.max_stages = 15;
            config.stop_rule = StopRule::FixedStages;
            let base = if full {
                GeneratorSpec::sensing(n, n, r, 1).with_m(2328)
            } else {
                GeneratorSpec::sensing(n, n, r, 1).with_nu(1.5)
            };
            GridSpec { base, axis: None, seeds: seeds(10), config, workers: None }
        }
        "nu" => {
            let (n, r) = if full { (100, 5) } else { (60, 5) };
            config.max_stages = 5;
            config.stop_rule = StopRule::FixedStages;
            let values: Vec<f64> = if full {
                (10..=30).map(|i| i as f64 / 10.0).collect()
            } else {
                vec![1.0, 1.5, 2.0, 2.5, 3.0]
            };
            GridSpec {
                base: GeneratorSpec::sensing(n, n, r, 1).with_nu(1.0),
                axis: Some(GridAxis::Nu(values)),
                seeds: seeds(5),
                config,
                workers: None,
            }
        }
        "correlation" => {
            let (n, r) = (if full { 1000 } else { 150 }, 5);
            config.max_stages = 8;
            config.stop_rule = StopRule::RankStability;
            let ratio = if full { 0.0192 } else { dof_matched_ratio(0.0192, 1000, n, r) };
            GridSpec {
                base: GeneratorSpec::correlation(n, r, ratio, 1),
                axis: None,
                seeds: seeds(5),
                config,
                workers: None,
            }
        }
        "covariance" => {
            let (n, r) = (if full { 1000 } else { 150 }, 13);
            config.max_stages = 8;
            config.stop_rule = StopRule::RankStability;
            let ratio = if full { 0.0572 } else { dof_matched_ratio(0.0572, 1000, n, r) };
            let mut base = GeneratorSpec::covariance(n, r, ratio, 1);
            base.num_fixed_diag = n / 5;
            GridSpec { base, axis: None, seeds: seeds(5), config, workers: None }
        }
        other => {
            return Err(invalid(format!("unknown preset '{other}', expected one of {PRESETS:?}")));
        }
    };
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> GridSpec {
        let config = MultistageConfig {
            max_stages: 2,
            stop_rule: StopRule::FixedStages,
            ..Default::default()
        };
        GridSpec {
            base: GeneratorSpec::sensing(6, 6, 1, 3).with_nu(2.0),
            axis: Some(GridAxis::Nu(vec![1.5, 2.0])),
            seeds: vec![1, 2],
            config,
            workers: Some(2),
        }
    }

    #[test]
    fn points_cross_axis_and_seeds() {
        let pts = tiny_grid().points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].spec.nu, Some(1.5));
        assert_eq!(pts[1].spec.seed, 2);
        assert_eq!(pts[3].axis_value, Some(2.0));
    }

    #[test]
    fn grid_writes_outputs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let grid = tiny_grid();
        let a = run_grid(&grid, Some(dir.path())).unwrap();
        assert_eq!(a.failures(), 0);
        for f in ["records.json", "stages.csv", "summary.csv", "fig_stages.csv", "fig_axis.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let mut serial = grid.clone();
        serial.workers = Some(1);
        let b = run_grid(&serial, None).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.without_timings(), y.without_timings());
        }
    }

    #[test]
    fn failures_are_recorded() {
        // dense operators above the memory budget fail at generation time
        let mut grid = tiny_grid();
        grid.base = GeneratorSpec::sensing(400, 400, 1, 1).with_m(2000);
        grid.axis = Some(GridAxis::M(vec![2000, 2100]));
        grid.seeds = vec![1];
        grid.validate().unwrap();
        let out = run_grid(&grid, None).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.failures(), 2);
        assert!(out.records[0].error.as_ref().unwrap().contains("resource"));
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            for profile in [Profile::Desk, Profile::Full] {
                preset(name, profile).unwrap().validate().unwrap();
            }
        }
        assert!(preset("nope", Profile::Desk).is_err());
    }
}
