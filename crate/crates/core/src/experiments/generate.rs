//! Seeded problem generators.
//!
//! Every instance is drawn from `ChaCha8Rng::seed_from_u64(seed)` split into
//! independent streams, one per component, so that changing, say, the
//! sample count leaves the ground truth untouched:
//!
//! | stream | component                                   |
//! |--------|---------------------------------------------|
//! | 0      | ground-truth factors                        |
//! | 1      | sensing matrices                            |
//! | 2      | measurement noise                           |
//! | 3      | known-entry and sampled-entry positions     |
//! | 4      | scalar draws (upper-bound jitter)           |

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::SamplingOperator;
use crate::solver::{FixedEntry, LinearBlock, PsdCompletionProblem, SensingProblem};
use crate::spectral::{self, Matrix, Vector};

const STREAM_TRUTH: u64 = 0;
const STREAM_OPERATOR: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INDICES: u64 = 3;
const STREAM_SCALARS: u64 = 4;

/// Largest dense sensing operator a generator will allocate.
pub const MAX_DENSE_BYTES: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Sensing,
    Correlation,
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n1: usize,
    /// Column count for sensing; ignored for the symmetric kinds.
    #[serde(default)]
    pub n2: Option<usize>,
    pub r: usize,
    /// Scale of the first factor column (symmetric kinds).
    #[serde(default = "one")]
    pub weight: f64,
    /// Explicit measurement count.
    #[serde(default)]
    pub m: Option<usize>,
    /// Sensing: `m = round(nu * r * (n1 + n2 - r))`.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Symmetric kinds: fraction of the candidate entries observed.
    #[serde(default)]
    pub sample_ratio: Option<f64>,
    /// Sensing: entries of the ground truth known exactly.
    #[serde(default = "five")]
    pub num_fixed_entries: usize,
    /// Symmetric kinds: known diagonal entries (covariance only; the
    /// correlation diagonal is always pinned to one).
    #[serde(default)]
    pub num_fixed_diag: usize,
    #[serde(default)]
    pub num_fixed_offdiag: usize,
    #[serde(default = "tenth")]
    pub noise_level: f64,
    /// `delta = delta_ratio * ||b||`.
    #[serde(default = "tenth")]
    pub delta_ratio: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn five() -> usize {
    5
}

fn tenth() -> f64 {
    0.1
}

impl GeneratorSpec {
    pub fn sensing(n1: usize, n2: usize, r: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Sensing,
            n1,
            n2: Some(n2),
            r,
            weight: 1.0,
            m: None,
            nu: None,
            sample_ratio: None,
            num_fixed_entries: 5,
            num_fixed_diag: 0,
            num_fixed_offdiag: 0,
            noise_level: 0.1,
            delta_ratio: 0.1,
            seed,
        }
    }

    pub fn correlation(n: usize, r: usize, sample_ratio: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Correlation,
            n1: n,
            n2: None,
            sample_ratio: Some(sample_ratio),
            num_fixed_entries: 0,
            ..Self::sensing(n, n, r, seed)
        }
    }

    pub fn covariance(n: usize, r: usize, sample_ratio: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Covariance,
            ..Self::correlation(n, r, sample_ratio, seed)
        }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            GeneratorKind::Sensing => (self.n1, self.n2.unwrap_or(self.n1)),
            _ => (self.n1, self.n1),
        }
    }

    /// Number of candidate entries the sampler draws from.
    fn candidate_count(&self) -> usize {
        let n = self.n1;
        match self.kind {
            GeneratorKind::Sensing => 0,
            GeneratorKind::Correlation => n * (n - 1) / 2 - self.num_fixed_offdiag,
            GeneratorKind::Covariance => n * (n + 1) / 2 - self.num_fixed_offdiag - self.num_fixed_diag,
        }
    }

    /// The measurement count implied by the spec.
    pub fn measurement_count(&self) -> Result<usize> {
        let set = [self.m.is_some(), self.nu.is_some(), self.sample_ratio.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if set != 1 {
            return Err(invalid("exactly one of m, nu and sample_ratio must be given"));
        }
        let (n1, n2) = self.shape();
        let m = if let Some(m) = self.m {
            m
        } else if let Some(nu) = self.nu {
            if self.kind != GeneratorKind::Sensing {
                return Err(invalid("nu applies to sensing instances only"));
            }
            if !(nu > 0.0) {
                return Err(invalid("nu must be positive"));
            }
            (nu * (self.r * (n1 + n2 - self.r)) as f64).round() as usize
        } else {
            let ratio = self.sample_ratio.unwrap_or_default();
            if self.kind == GeneratorKind::Sensing {
                return Err(invalid("sample_ratio applies to the symmetric kinds only"));
            }
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(invalid("sample_ratio must lie in (0, 1]"));
            }
            let n = n1 as f64;
            let total = match self.kind {
                GeneratorKind::Correlation => n * (n - 1.0) / 2.0,
                _ => n * (n + 1.0) / 2.0,
            };
            (ratio * total).round() as usize
        };
        if m == 0 {
            return Err(invalid("the spec yields zero measurements"));
        }
        if self.kind != GeneratorKind::Sensing && m > self.candidate_count() {
            return Err(invalid(format!(
                "{m} samples requested but only {} unknown entries exist",
                self.candidate_count()
            )));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = self.shape();
        if n1 == 0 || n2 == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if self.r == 0 || self.r > n1.min(n2) {
            return Err(invalid(format!("rank {} outside 1..={}", self.r, n1.min(n2))));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(invalid("noise_level must be finite and >= 0"));
        }
        if !(self.delta_ratio >= 0.0 && self.delta_ratio.is_finite()) {
            return Err(invalid("delta_ratio must be finite and >= 0"));
        }
        match self.kind {
            GeneratorKind::Sensing => {
                if self.num_fixed_entries > n1 * n2 {
                    return Err(invalid("more fixed entries than matrix entries"));
                }
            }
            GeneratorKind::Correlation | GeneratorKind::Covariance => {
                if self.weight == 0.0 || !self.weight.is_finite() {
                    return Err(invalid("weight must be finite and nonzero"));
                }
                if self.num_fixed_offdiag > n1 * (n1 - 1) / 2 {
                    return Err(invalid("more known off-diagonal entries than exist"));
                }
                if self.num_fixed_diag > n1 {
                    return Err(invalid("more known diagonal entries than exist"));
                }
                if self.kind == GeneratorKind::Correlation && self.num_fixed_diag != 0 {
                    return Err(invalid("the correlation diagonal is always known; num_fixed_diag must be 0"));
                }
            }
        }
        self.measurement_count()?;
        Ok(())
    }
}

/// A generated instance with its ground truth and the raw noise draw.
#[derive(Debug, Clone)]
pub struct Generated<P> {
    pub problem: P,
    pub xbar: Matrix,
    /// The standard Gaussian vector scaled into the measurements.
    pub xi: Vector,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    // column by column, matching the usual column-major fill order
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `b = A(X_bar) + level (||A(X_bar)|| / ||xi||) xi`.
pub fn noisy_observations(clean: &Vector, xi: &Vector, level: f64) -> Vector {
    let xn = xi.norm();
    if level == 0.0 || xn == 0.0 {
        return clean.clone();
    }
    clean + xi * (level * clean.norm() / xn)
}

/// Sensing instance: Gaussian factors and sensing matrices, a few entries
/// known exactly, `delta = delta_ratio ||b||`, `R = 2 ||X_bar||`.
pub fn gen_sensing(spec: &GeneratorSpec) -> Result<Generated<SensingProblem>> {
    if spec.kind != GeneratorKind::Sensing {
        return Err(invalid("gen_sensing needs a sensing spec"));
    }
    spec.validate()?;
    let (n1, n2) = spec.shape();
    let m = spec.measurement_count()?;
    let bytes = m
        .checked_mul(n1 * n2)
        .and_then(|v| v.checked_mul(8))
        .unwrap_or(usize::MAX);
    if bytes > MAX_DENSE_BYTES {
        return Err(Error::Resource(format!(
            "a dense {m} x {} sensing operator needs {bytes} bytes (limit {MAX_DENSE_BYTES})",
            n1 * n2
        )));
    }

    let mut truth = stream(spec.seed, STREAM_TRUTH);
    let xr = randn(n1, spec.r, &mut truth);
    let xl = randn(n2, spec.r, &mut truth);
    let xbar = &xr * xl.transpose();

    let mut ops = stream(spec.seed, STREAM_OPERATOR);
    // one sensing matrix per row, entries in column-major order
    let mut data = Matrix::zeros(m, n1 * n2);
    for i in 0..m {
        for k in 0..n1 * n2 {
            data[(i, k)] = StandardNormal.sample(&mut ops);
        }
    }
    let op = SamplingOperator::from_dense(n1, n2, data)?;

    let mut noise = stream(spec.seed, STREAM_NOISE);
    let xi = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut noise));
    let b = noisy_observations(&op.apply(&xbar)?, &xi, spec.noise_level);

    let mut idx = stream(spec.seed, STREAM_INDICES);
    let fixed_entries = index::sample(&mut idx, n1 * n2, spec.num_fixed_entries)
        .into_iter()
        .map(|k| {
            let (row, col) = (k % n1, k / n1);
            FixedEntry { row, col, value: xbar[(row, col)] }
        })
        .collect();

    let problem = SensingProblem {
        op,
        delta: spec.delta_ratio * b.norm(),
        b,
        fixed_entries,
        spectral_radius: 2.0 * spectral::spectral_norm(&xbar)?,
    };
    Ok(Generated { problem, xbar, xi })
}

/// Upper-triangular positions `(i, j)`, `i < j`, in row-major order.
fn offdiag_position(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Symmetric ground truth `L L^T` with the first factor column scaled by
/// `weight`; `L` has `N(0, 1 / sqrt(n))` entries when `scaled`.
fn symmetric_factor_truth(spec: &GeneratorSpec, scaled: bool) -> Matrix {
    let n = spec.n1;
    let mut truth = stream(spec.seed, STREAM_TRUTH);
    let mut l = randn(n, spec.r, &mut truth);
    if scaled {
        l /= (n as f64).sqrt().sqrt();
    }
    l.column_mut(0).scale_mut(spec.weight);
    let g = &l * l.transpose();
    (&g + g.transpose()) * 0.5
}

/// Picks `k` distinct off-diagonal positions, then `m` further positions
/// from the remaining candidates (off-diagonal, plus the diagonal entries not
/// in `known_diag` when `with_diag`).
fn sample_positions(
    n: usize,
    known_offdiag: usize,
    known_diag: &[usize],
    with_diag: bool,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let total_off = n * (n - 1) / 2;
    let off = index::sample(rng, total_off, known_offdiag).into_vec();
    let known: Vec<(usize, usize)> = off.iter().map(|&k| offdiag_position(k, n)).collect();
    let mut taken = vec![false; total_off];
    for &k in &off {
        taken[k] = true;
    }
    let mut candidates: Vec<(usize, usize)> = (0..total_off)
        .filter(|&k| !taken[k])
        .map(|k| offdiag_position(k, n))
        .collect();
    if with_diag {
        let mut is_known = vec![false; n];
        for &i in known_diag {
            is_known[i] = true;
        }
        candidates.extend((0..n).filter(|&i| !is_known[i]).map(|i| (i, i)));
    }
    let picked = index::sample(rng, candidates.len(), m)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    (known, picked)
}

fn observe(
    n: usize,
    positions: Vec<(usize, usize)>,
    xbar: &Matrix,
    spec: &GeneratorSpec,
) -> Result<(SamplingOperator, Vector, f64, Vector)> {
    let op = SamplingOperator::symmetric_mask(n, positions)?;
    let mut noise = stream(spec.seed, STREAM_NOISE);
    let xi = Vector::from_fn(op.len(), |_, _| StandardNormal.sample(&mut noise));
    let b = noisy_observations(&op.apply(xbar)?, &xi, spec.noise_level);
    let delta = spec.delta_ratio * b.norm();
    Ok((op, b, delta, xi))
}

/// Correlation completion: unit diagonal pinned, optional known
/// off-diagonal entries, noisy samples of the remaining off-diagonal ones.
pub fn gen_correlation(spec: &GeneratorSpec) -> Result<Generated<PsdCompletionProblem>> {
    if spec.kind != GeneratorKind::Correlation {
        return Err(invalid("gen_correlation needs a correlation spec"));
    }
    spec.validate()?;
    let n = spec.n1;
    let m = spec.measurement_count()?;
    let g = symmetric_factor_truth(spec, false);
    let d = g.diagonal().map(|v| 1.0 / v.sqrt());
    let mut xbar = Matrix::from_fn(n, n, |i, j| d[i] * g[(i, j)] * d[j]);
    xbar = (&xbar + xbar.transpose()) * 0.5;
    xbar.fill_diagonal(1.0);

    let mut idx = stream(spec.seed, STREAM_INDICES);
    let (known, sampled) = sample_positions(n, spec.num_fixed_offdiag, &[], false, m, &mut idx);
    let mut eq_pos: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    eq_pos.extend(known.iter().copied());
    let rhs = Vector::from_iterator(eq_pos.len(), eq_pos.iter().map(|&(i, j)| xbar[(i, j)]));
    let eq = LinearBlock {
        op: SamplingOperator::symmetric_mask(n, eq_pos)?,
        rhs,
    };
    let (op, b, delta, xi) = observe(n, sampled, &xbar, spec)?;
    let problem = PsdCompletionProblem {
        n,
        op,
        b,
        delta,
        eq: Some(eq),
        ineq: None,
    };
    Ok(Generated { problem, xbar, xi })
}

/// Covariance completion: known entries pinned, unknown diagonal entries
/// bounded above by `(1 + 0.01 u) ||X_bar||_inf`, noisy samples of the
/// remaining upper-triangular entries.
pub fn gen_covariance(spec: &GeneratorSpec) -> Result<Generated<PsdCompletionProblem>> {
    if spec.kind != GeneratorKind::Covariance {
        return Err(invalid("gen_covariance needs a covariance spec"));
    }
    spec.validate()?;
    let n = spec.n1;
    let m = spec.measurement_count()?;
    let xbar = symmetric_factor_truth(spec, true);

    let mut idx = stream(spec.seed, STREAM_INDICES);
    let known_diag = index::sample(&mut idx, n, spec.num_fixed_diag).into_vec();
    let (known_off, sampled) = sample_positions(n, spec.num_fixed_offdiag, &known_diag, true, m, &mut idx);

    let mut eq_pos: Vec<(usize, usize)> = known_diag.iter().map(|&i| (i, i)).collect();
    eq_pos.extend(known_off.iter().copied());
    let eq = if eq_pos.is_empty() {
        None
    } else {
        let rhs = Vector::from_iterator(eq_pos.len(), eq_pos.iter().map(|&(i, j)| xbar[(i, j)]));
        Some(LinearBlock {
            op: SamplingOperator::symmetric_mask(n, eq_pos)?,
            rhs,
        })
    };

    let mut is_known = vec![false; n];
    for &i in &known_diag {
        is_known[i] = true;
    }
    let unknown_diag: Vec<(usize, usize)> = (0..n).filter(|&i| !is_known[i]).map(|i| (i, i)).collect();
    let ineq = if unknown_diag.is_empty() {
        None
    } else {
        let u: f64 = stream(spec.seed, STREAM_SCALARS).random();
        let bound = (1.0 + 0.01 * u) * xbar.amax();
        Some(LinearBlock {
            rhs: Vector::from_element(unknown_diag.len(), bound),
            op: SamplingOperator::symmetric_mask(n, unknown_diag)?,
        })
    };

    let (op, b, delta, xi) = observe(n, sampled, &xbar, spec)?;
    let problem = PsdCompletionProblem {
        n,
        op,
        b,
        delta,
        eq,
        ineq,
    };
    Ok(Generated { problem, xbar, xi })
}

/// `lambda_1 / lambda_r` of a symmetric ground truth of rank `r`.
pub fn eigen_ratio(xbar: &Matrix, r: usize) -> Result<f64> {
    let (vals, _) = spectral::sym_eigen(&spectral::symmetrize(xbar)?)?;
    if r == 0 || r > vals.len() || vals[r - 1] <= 0.0 {
        return Err(invalid("rank exceeds the number of positive eigenvalues"));
    }
    Ok(vals[0] / vals[r - 1])
}

/// Sample ratio at size `n` that keeps the samples-per-degree-of-freedom
/// ratio of a reference ratio at size `ref_n`, for symmetric rank-`r`
/// matrices with `n r - r (r - 1) / 2` degrees of freedom. Ratios are over
/// the `n (n - 1) / 2` off-diagonal entries.
pub fn dof_matched_ratio(ref_ratio: f64, ref_n: usize, n: usize, r: usize) -> f64 {
    let dof = |n: usize| (n * r) as f64 - (r * (r - 1)) as f64 / 2.0;
    let pairs = |n: usize| (n * (n - 1)) as f64 / 2.0;
    let per_dof = ref_ratio * pairs(ref_n) / dof(ref_n);
    (per_dof * dof(n) / pairs(n)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offdiag_positions_enumerate_the_upper_triangle() {
        let n = 5;
        let all: Vec<_> = (0..n * (n - 1) / 2).map(|k| offdiag_position(k, n)).collect();
        let mut expected = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                expected.push((i, j));
            }
        }
        assert_eq!(all, expected);
    }

    #[test]
    fn measurement_count_rules() {
        let s = GeneratorSpec::sensing(100, 100, 5, 1).with_nu(2.0);
        assert_eq!(s.measurement_count().unwrap(), 1950);
        let c = GeneratorSpec::correlation(1000, 5, 0.0192, 1);
        assert_eq!(c.measurement_count().unwrap(), (0.0192f64 * 499_500.0).round() as usize);
        let bad = GeneratorSpec::sensing(10, 10, 2, 1);
        assert!(bad.measurement_count().is_err());
        assert!(GeneratorSpec::sensing(10, 10, 2, 1).with_nu(1.0).with_m(5).validate().is_err());
    }

    #[test]
    fn dof_matched_ratio_is_identity_at_the_reference_size() {
        assert!((dof_matched_ratio(0.0192, 1000, 1000, 5) - 0.0192).abs() < 1e-15);
        let small = dof_matched_ratio(0.0192, 1000, 150, 5);
        assert!(small > 0.0192 && small < 1.0);
    }
}
