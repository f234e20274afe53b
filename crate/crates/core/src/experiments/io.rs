//! Problem files: a JSON envelope holding the problem, optionally with the
//! dense sensing operator and the ground truth in separate binary files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::GeneratorSpec;
use crate::error::{invalid, Result};
use crate::matio;
use crate::multistage::Problem;
use crate::operator::SamplingOperator;
use crate::spectral::Matrix;

pub const PROBLEM_FILE: &str = "problem.json";
pub const OPERATOR_FILE: &str = "operator.bin";
pub const GROUND_TRUTH_FILE: &str = "xbar.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemEnvelope {
    pub problem: Problem,
    /// Dense operator rows stored separately; when set, the inline
    /// operator carries no rows. Relative paths resolve against the
    /// envelope's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_file: Option<PathBuf>,
    #[serde(default, with = "matio::opt_json_rows", skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

/// A loaded problem with its ground truth, when known.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: Problem,
    pub ground_truth: Option<Matrix>,
    pub generator: Option<GeneratorSpec>,
}

/// Writes `problem.json` into `dir`. With `binary`, a dense sensing
/// operator and the ground truth go to `operator.bin` and `xbar.bin`.
pub fn save_problem(
    dir: &Path,
    problem: &Problem,
    ground_truth: Option<&Matrix>,
    generator: Option<&GeneratorSpec>,
    binary: bool,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut env = ProblemEnvelope {
        problem: problem.clone(),
        operator_file: None,
        ground_truth: None,
        ground_truth_file: None,
        generator: generator.cloned(),
    };
    if binary {
        if let Problem::Sensing(p) = &mut env.problem {
            if let SamplingOperator::Explicit { rows, cols, data } = &mut p.op {
                matio::write_matrix(&dir.join(OPERATOR_FILE), data, true)?;
                *data = Matrix::zeros(0, *rows * *cols);
                env.operator_file = Some(PathBuf::from(OPERATOR_FILE));
            }
        }
        if let Some(x) = ground_truth {
            matio::write_matrix(&dir.join(GROUND_TRUTH_FILE), x, true)?;
            env.ground_truth_file = Some(PathBuf::from(GROUND_TRUTH_FILE));
        }
    } else {
        env.ground_truth = ground_truth.cloned();
    }
    let path = dir.join(PROBLEM_FILE);
    fs::write(&path, serde_json::to_vec(&env)?)?;
    Ok(path)
}

/// Reads an envelope, resolving the external files it names.
pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let env: ProblemEnvelope = serde_json::from_slice(&fs::read(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
    let mut problem = env.problem;
    if let Some(op_path) = &env.operator_file {
        let loaded = matio::read_matrix(&resolve(op_path))?;
        match &mut problem {
            Problem::Sensing(p) => match &mut p.op {
                SamplingOperator::Explicit { rows, cols, data } => {
                    if loaded.ncols() != *rows * *cols {
                        return Err(invalid("operator file width does not match the matrix shape"));
                    }
                    *data = loaded;
                }
                SamplingOperator::Mask { .. } => {
                    return Err(invalid("an operator file needs an explicit operator"));
                }
            },
            Problem::Psd(_) => return Err(invalid("operator files apply to sensing problems only")),
        }
    }
    let ground_truth = match (&env.ground_truth, &env.ground_truth_file) {
        (Some(x), _) => Some(x.clone()),
        (None, Some(p)) => Some(matio::read_matrix(&resolve(p))?),
        (None, None) => None,
    };
    problem.validate()?;
    Ok(LoadedProblem {
        problem,
        ground_truth,
        generator: env.generator,
    })
}
