//! Computable error-bound theory: the bound functions `Xi` and `Gamma`, the
//! contraction sequence `gamma_tilde`, admissible first penalties,
//! geometric-convergence quantities, restricted-eigenvalue estimates and the
//! restricted-eigenvalue growth condition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::SamplingOperator;
use crate::penalty::PhiSpec;
use crate::spectral::{self, Matrix};

/// `gamma_0 = 1 / sqrt(2)`, the first-stage value.
pub const GAMMA0: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Restricted-eigenvalue data of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RECParams {
    pub r: usize,
    pub s: usize,
    /// Growth constant in `[0, sqrt 2)`.
    pub c: f64,
    /// `theta_+(2r + s)`.
    pub theta_plus: f64,
    /// `theta_-(2r + s)`.
    pub theta_minus: f64,
    pub delta: f64,
    /// `sigma_r(X_bar)`, needed by the stage recursions.
    #[serde(default)]
    pub sigma_r_bar: Option<f64>,
    /// Smaller matrix dimension; when given, `s <= (n - 2r) / 2` is checked.
    #[serde(default)]
    pub n: Option<usize>,
}

impl RECParams {
    /// Parameters with `Xi(0) = 1` (`delta = 1/2`, `theta_+ = theta_- = 1`)
    /// and `sigma_r(X_bar) = alpha Xi(gamma_0)`.
    pub fn normalized(r: usize, s: usize, c: f64, alpha: f64) -> Result<Self> {
        let mut p = Self {
            r,
            s,
            c,
            theta_plus: 1.0,
            theta_minus: 1.0,
            delta: 0.5,
            sigma_r_bar: None,
            n: None,
        };
        p.validate()?;
        p.sigma_r_bar = Some(alpha * xi(&p, GAMMA0)?);
        Ok(p)
    }

    /// Copy with `(delta, theta_+, theta_-)` rescaled and `sigma_r(X_bar)`
    /// moved along so that `sigma_r / Xi(gamma_0)` is unchanged.
    pub fn rescaled(&self, delta_factor: f64, theta_plus_factor: f64, theta_minus_factor: f64) -> Self {
        let mut q = *self;
        q.delta *= delta_factor;
        q.theta_plus *= theta_plus_factor;
        q.theta_minus *= theta_minus_factor;
        let k = q.scale() / self.scale();
        q.sigma_r_bar = self.sigma_r_bar.map(|v| v * k);
        q
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.s == 0 {
            return Err(invalid("r and s must be positive"));
        }
        if !(self.c >= 0.0 && self.c < std::f64::consts::SQRT_2) {
            return Err(invalid(format!("c must lie in [0, sqrt 2), got {}", self.c)));
        }
        if !(self.theta_plus > 0.0 && self.theta_minus > 0.0 && self.theta_plus.is_finite()) {
            return Err(invalid("restricted eigenvalues must be positive and finite"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta must be finite and >= 0"));
        }
        if let Some(n) = self.n {
            if 2 * self.s + 2 * self.r > n {
                return Err(invalid(format!(
                    "s = {} exceeds (n - 2r) / 2 with n = {n}, r = {}",
                    self.s, self.r
                )));
            }
        }
        if let Some(sr) = self.sigma_r_bar {
            if !(sr > 0.0 && sr.is_finite()) {
                return Err(invalid("sigma_r(X_bar) must be positive"));
            }
        }
        Ok(())
    }

    /// `2 delta sqrt(theta_+) / theta_-`, the statistical error `Xi(0)`.
    pub fn scale(&self) -> f64 {
        2.0 * self.delta * self.theta_plus.sqrt() / self.theta_minus
    }

    fn sigma_r(&self) -> Result<f64> {
        self.sigma_r_bar
            .ok_or_else(|| invalid("sigma_r(X_bar) is required for the stage recursion"))
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("t = {t} must be finite and >= 0")));
        }
        if self.c * t >= 1.0 {
            return Err(Error::Domain(format!("t = {t} is not below 1/c = {}", 1.0 / self.c)));
        }
        Ok(())
    }
}

/// Error bound `Xi(t) = Xi(0) sqrt(1 + r t^2 / (2s)) / (1 - c t)`.
pub fn xi(p: &RECParams, t: f64) -> Result<f64> {
    p.check_t(t)?;
    let (r, s) = (p.r as f64, p.s as f64);
    Ok(p.scale() / (1.0 - p.c * t) * (1.0 + r * t * t / (2.0 * s)).sqrt())
}

/// Approximate-rank bound `Gamma(t) = Xi(0) sqrt(2r) t / (1 - c t)`.
pub fn gamma_cap(p: &RECParams, t: f64) -> Result<f64> {
    p.check_t(t)?;
    Ok(p.scale() * (2.0 * p.r as f64).sqrt() * t / (1.0 - p.c * t))
}

/// The contraction sequence. `gamma_tilde[0] = gamma_0`; the other arrays
/// are indexed by stage, entry `k - 1` holding stage `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSeq {
    pub gamma_tilde: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub rho: Vec<f64>,
    /// `Xi(gamma_tilde[k])`, aligned with `gamma_tilde`.
    pub xi: Vec<f64>,
}

impl BoundSeq {
    /// `Xi(gamma_tilde_k) / Xi(gamma_0)` for `k = 1..=K`.
    pub fn xi_ratios(&self) -> Vec<f64> {
        self.xi[1..].iter().map(|v| v / self.xi[0]).collect()
    }
}

fn hypothesis_two_xi(p: &RECParams) -> Result<(f64, f64)> {
    let sr = p.sigma_r()?;
    let x0 = xi(p, GAMMA0)?;
    if !(sr > 2.0 * x0) {
        return Err(Error::Hypothesis(format!(
            "sigma_r(X_bar) > 2 Xi(gamma_0) fails: {sr} <= {}",
            2.0 * x0
        )));
    }
    Ok((sr, x0))
}

fn beta_of(xi_prev: f64, sr: f64) -> Result<f64> {
    let arg = 1.0 - std::f64::consts::SQRT_2 * xi_prev / sr;
    if !(arg > 0.0) {
        return Err(Error::Domain("sqrt(2) Xi(gamma_tilde) >= sigma_r(X_bar)".into()));
    }
    Ok(-arg.ln() / std::f64::consts::SQRT_2)
}

/// Runs the `gamma_tilde` recursion for `stages` stages. `mu_schedule[i]`
/// is `mu_{i+2}`; the last value repeats, and an empty schedule means
/// `mu = 1`. Each `mu_k` must lie in `[1, Xi(gamma_tilde_{k-2}) /
/// Xi(gamma_tilde_{k-1})]`, with `gamma_tilde_0 = gamma_0` seeding `k = 2`.
pub fn gamma_tilde_recursion(
    p: &RECParams,
    phi: &PhiSpec,
    rho1: f64,
    mu_schedule: &[f64],
    stages: usize,
) -> Result<BoundSeq> {
    p.validate()?;
    phi.validate()?;
    if !(rho1 > 0.0 && rho1.is_finite()) {
        return Err(invalid("rho_1 must be positive"));
    }
    let (sr, x0) = hypothesis_two_xi(p)?;
    let (r, sq2) = (p.r as f64, std::f64::consts::SQRT_2);
    let mut seq = BoundSeq {
        gamma_tilde: vec![GAMMA0],
        a_tilde: Vec::new(),
        b_tilde: Vec::new(),
        beta_tilde: Vec::new(),
        rho: Vec::new(),
        xi: vec![x0],
    };
    let mut rho = rho1;
    for k in 1..=stages {
        if k >= 2 {
            let mu = if mu_schedule.is_empty() {
                1.0
            } else {
                mu_schedule[(k - 2).min(mu_schedule.len() - 1)]
            };
            let cap = seq.xi[k - 2] / seq.xi[k - 1];
            if !(mu >= 1.0 && mu <= cap) {
                return Err(Error::Hypothesis(format!(
                    "mu_{k} = {mu} outside [1, Xi(gamma_tilde_{}) / Xi(gamma_tilde_{})] = [1, {cap}]",
                    k - 2,
                    k - 1
                )));
            }
            rho *= mu;
        }
        let xi_prev = seq.xi[k - 1];
        let a = phi.psi_conj_right_derivative(rho * xi_prev);
        let b = phi.psi_conj_left_derivative(rho * (sr - xi_prev));
        let beta = beta_of(xi_prev, sr)?;
        let denom = (2.0 * r).sqrt() * (1.0 - a) * (1.0 - beta * beta);
        if !(denom > 0.0) {
            return Err(Error::Domain(format!(
                "stage {k}: the gamma_tilde denominator vanishes (a = {a}, beta = {beta})"
            )));
        }
        let g = (r.sqrt() * (1.0 - b) + (sq2 * a + 1.0) * beta) / denom;
        let x = xi(p, g)?;
        seq.a_tilde.push(a);
        seq.b_tilde.push(b);
        seq.beta_tilde.push(beta);
        seq.rho.push(rho);
        seq.gamma_tilde.push(g);
        seq.xi.push(x);
    }
    Ok(seq)
}

/// First-penalty interval in units of `alpha / sigma_r(X_bar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RhoInterval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Tabulated first-penalty interval for `phi_1`, `[0.29, 1)` in units of
/// `alpha / sigma_r`; the midpoint of its closure is used.
pub const PHI1_TABLE_INTERVAL: RhoInterval = RhoInterval { lo: 0.29, hi: 1.0 };
/// Tabulated first-penalty interval for `phi_2` with `q = 1/2`,
/// `eps = 1e-3`: `[0.24, 4.42]` in units of `alpha / sigma_r`.
pub const PHI2_TABLE_INTERVAL: RhoInterval = RhoInterval { lo: 0.24, hi: 4.42 };

/// The tabulated interval for the variant of `phi`.
pub fn table_interval(phi: &PhiSpec) -> RhoInterval {
    match phi {
        PhiSpec::Phi1 => PHI1_TABLE_INTERVAL,
        PhiSpec::Phi2 { .. } => PHI2_TABLE_INTERVAL,
    }
}

/// How `rho_1` is picked for the ratio table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rho1Choice {
    /// Midpoint of `[lo, hi] alpha / sigma_r(X_bar)`.
    IntervalMidpoint { lo: f64, hi: f64 },
    /// `rho_1 = factor * alpha / sigma_r(X_bar) = factor / Xi(gamma_0)`.
    Factor { factor: f64 },
}

impl Rho1Choice {
    pub fn table_default(phi: &PhiSpec) -> Self {
        let i = table_interval(phi);
        Rho1Choice::IntervalMidpoint { lo: i.lo, hi: i.hi }
    }

    /// `rho_1 Xi(gamma_0)`, i.e. `rho_1` in units of `alpha / sigma_r`.
    pub fn factor(&self) -> f64 {
        match *self {
            Rho1Choice::IntervalMidpoint { lo, hi } => 0.5 * (lo + hi),
            Rho1Choice::Factor { factor } => factor,
        }
    }
}

/// Reduction ratios `Xi(gamma_tilde_k) / Xi(gamma_0)`, one row per stage
/// `k = 1..=K` and one column per `c`, plus the floor `Xi(0) / Xi(gamma_0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioTable {
    pub c: Vec<f64>,
    pub ratios: Vec<Vec<f64>>,
    pub floor: Vec<f64>,
}

/// Relative tolerance for the scale-cancellation self-check.
const CANCELLATION_TOL: f64 = 1e-9;

fn ratio_column(
    p: &RECParams,
    phi: &PhiSpec,
    alpha: f64,
    rule: Rho1Choice,
    mu_schedule: &[f64],
    stages: usize,
) -> Result<(Vec<f64>, f64)> {
    let sr = p.sigma_r()?;
    let rho1 = rule.factor() * alpha / sr;
    let seq = gamma_tilde_recursion(p, phi, rho1, mu_schedule, stages)?;
    let floor = xi(p, 0.0)? / seq.xi[0];
    Ok((seq.xi_ratios(), floor))
}

/// Ratio table at `sigma_r(X_bar) = alpha Xi(gamma_0)` with `mu = 1`.
///
/// The ratios depend on `(delta, theta_+, theta_-)` only through `Xi(0)`,
/// which cancels; each column is recomputed at a second, arbitrary scale
/// and the two must agree.
pub fn table1_ratios(
    phi: &PhiSpec,
    r: usize,
    s: usize,
    c_grid: &[f64],
    alpha: f64,
    rule: Rho1Choice,
    stages: usize,
) -> Result<RatioTable> {
    ratio_table(phi, r, s, c_grid, alpha, rule, &[], stages)
}

/// [`table1_ratios`] with a `mu` schedule (see [`gamma_tilde_recursion`]).
#[allow(clippy::too_many_arguments)]
pub fn ratio_table(
    phi: &PhiSpec,
    r: usize,
    s: usize,
    c_grid: &[f64],
    alpha: f64,
    rule: Rho1Choice,
    mu_schedule: &[f64],
    stages: usize,
) -> Result<RatioTable> {
    if c_grid.is_empty() || stages == 0 {
        return Err(invalid("the c grid and the stage count must be nonempty"));
    }
    let mut columns = Vec::with_capacity(c_grid.len());
    let mut floor = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let p = RECParams::normalized(r, s, c, alpha)?;
        let (col, f) = ratio_column(&p, phi, alpha, rule, mu_schedule, stages)?;
        let (col2, f2) = ratio_column(&p.rescaled(3.7, 2.3, 0.6), phi, alpha, rule, mu_schedule, stages)?;
        let close = |a: f64, b: f64| (a - b).abs() <= CANCELLATION_TOL * (1.0 + a.abs());
        if !close(f, f2) || col.iter().zip(&col2).any(|(a, b)| !close(*a, *b)) {
            return Err(Error::Numerical(format!(
                "ratios at c = {c} change under rescaling of (delta, theta)"
            )));
        }
        columns.push(col);
        floor.push(f);
    }
    let ratios = (0..stages)
        .map(|k| columns.iter().map(|col| col[k]).collect())
        .collect();
    Ok(RatioTable {
        c: c_grid.to_vec(),
        ratios,
        floor,
    })
}

/// Admissible first penalties, or the reason there are none.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rho1Admissible {
    /// Endpoints of the open interval of admissible `rho_1`.
    pub interval: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Whether `rho1` satisfies the first-stage condition
/// `a_1 < ((b_1 - beta_1^2) sqrt r - beta_1) / ((1 - beta_1^2) sqrt r + sqrt 2 beta_1)`.
pub fn rho1_condition(p: &RECParams, phi: &PhiSpec, rho1: f64) -> Result<bool> {
    let (sr, x0) = hypothesis_two_xi(p)?;
    let r = (p.r as f64).sqrt();
    let a = phi.psi_conj_right_derivative(rho1 * x0);
    let b = phi.psi_conj_left_derivative(rho1 * (sr - x0));
    let beta = beta_of(x0, sr)?;
    let rhs = ((b - beta * beta) * r - beta) / ((1.0 - beta * beta) * r + std::f64::consts::SQRT_2 * beta);
    Ok(a < rhs)
}

/// Grid points per decade of `rho_1 Xi(gamma_0)` in the admissibility scan.
const RHO_SCAN_PER_DECADE: usize = 200;
const RHO_SCAN_DECADES: (i32, i32) = (-6, 6);

/// The set of `rho_1 > 0` meeting [`rho1_condition`]: a log-grid scan of
/// `rho_1 Xi(gamma_0)` over `[1e-6, 1e6]` locates the admissible run, whose
/// endpoints are then refined by bisection. When several disjoint runs
/// exist the widest one is returned and the diagnostic says so.
pub fn rho1_admissible(p: &RECParams, phi: &PhiSpec) -> Result<Rho1Admissible> {
    p.validate()?;
    phi.validate()?;
    let x0 = match hypothesis_two_xi(p) {
        Ok((_, x0)) => x0,
        Err(Error::Hypothesis(msg)) => {
            return Ok(Rho1Admissible { interval: None, diagnostic: Some(msg) });
        }
        Err(e) => return Err(e),
    };
    let (d0, d1) = RHO_SCAN_DECADES;
    let count = ((d1 - d0) as usize) * RHO_SCAN_PER_DECADE + 1;
    let grid: Vec<f64> = (0..count)
        .map(|i| 10f64.powf(d0 as f64 + i as f64 / RHO_SCAN_PER_DECADE as f64) / x0)
        .collect();
    let flags: Vec<bool> = grid
        .iter()
        .map(|&rho| rho1_condition(p, phi, rho))
        .collect::<Result<_>>()?;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < count {
        if flags[i] {
            let start = i;
            while i + 1 < count && flags[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    if runs.is_empty() {
        return Ok(Rho1Admissible {
            interval: None,
            diagnostic: Some("no rho_1 satisfies the first-stage condition".into()),
        });
    }
    let &(a, b) = runs
        .iter()
        .max_by(|x, y| (grid[x.1] / grid[x.0]).total_cmp(&(grid[y.1] / grid[y.0])))
        .expect("nonempty");
    let bisect = |mut good: f64, mut bad: f64| -> Result<f64> {
        for _ in 0..200 {
            let mid = (good * bad).sqrt();
            if mid == good || mid == bad {
                break;
            }
            if rho1_condition(p, phi, mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(0.5 * (good + bad))
    };
    let lo = if a == 0 { grid[0] } else { bisect(grid[a], grid[a - 1])? };
    let hi = if b + 1 == count { grid[b] } else { bisect(grid[b], grid[b + 1])? };
    let diagnostic = (runs.len() > 1).then(|| format!("{} disjoint admissible runs; widest returned", runs.len()));
    Ok(Rho1Admissible {
        interval: Some((lo, hi)),
        diagnostic,
    })
}

/// Right-hand side of the geometric-convergence bound together with the
/// contraction factor and the stage count it implies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricBound {
    /// Bound on `||X^k - X_bar||_F` for `k = 1..=K`.
    pub bounds: Vec<f64>,
    /// The statistical part `Xi(0) / (1 - c gamma_1) [1 + ...]`.
    pub statistical: f64,
    /// `(1 + sqrt 2 a_1) / ((1 - a_1)(1 - beta_1^2) sqrt(r + 4s))`.
    pub alpha: f64,
    /// `alpha Xi(gamma_0) / (sigma_r - sqrt 2 Xi(gamma_0))`.
    pub varrho: f64,
    pub k_bar: usize,
}

/// `ceil(log(Xi(0) / Xi(gamma_0)) / log(varrho) + 1)`: stages after which
/// the estimation error drops below the statistical error.
pub fn stage_count_bound(p: &RECParams, varrho: f64) -> Result<usize> {
    p.validate()?;
    if !(varrho > 0.0 && varrho < 1.0) {
        return Err(Error::Domain(format!("contraction factor {varrho} outside (0, 1)")));
    }
    // scale-free ratio: the common factor Xi(0) cancels
    let (r, s) = (p.r as f64, p.s as f64);
    let ratio = (1.0 - p.c * GAMMA0) / (1.0 + r * GAMMA0 * GAMMA0 / (2.0 * s)).sqrt();
    Ok((ratio.ln() / varrho.ln() + 1.0).ceil() as usize)
}

/// Geometric-convergence bound for `k = 1..=K` from the first stage of a
/// computed recursion and the observed first-stage error `relerr1 =
/// ||X^1 - X_bar||_F`.
pub fn geometric_bound(p: &RECParams, seq: &BoundSeq, relerr1: f64, stages: usize) -> Result<GeometricBound> {
    p.validate()?;
    if seq.a_tilde.is_empty() {
        return Err(invalid("the recursion must cover at least one stage"));
    }
    if !(relerr1 >= 0.0) {
        return Err(invalid("first-stage error must be >= 0"));
    }
    let sr = p.sigma_r()?;
    let x0 = xi(p, GAMMA0)?;
    let (r, s) = (p.r as f64, p.s as f64);
    let sq2 = std::f64::consts::SQRT_2;
    let (a1, b1, beta1, g1) = (seq.a_tilde[0], seq.b_tilde[0], seq.beta_tilde[0], seq.gamma_tilde[1]);
    let one_m = (1.0 - a1) * (1.0 - beta1 * beta1);
    let alpha = (1.0 + sq2 * a1) / (one_m * (r + 4.0 * s).sqrt());
    let need = 2f64.max(sq2 + alpha) * x0;
    if !(sr > need) {
        return Err(Error::Hypothesis(format!(
            "sigma_r(X_bar) > max(2, sqrt 2 + alpha) Xi(gamma_0) fails: {sr} <= {need}"
        )));
    }
    let varrho = alpha * x0 / (sr - sq2 * x0);
    let statistical = xi(p, 0.0)? / (1.0 - p.c * g1) * (1.0 + (1.0 - b1) * r.sqrt() / (2.0 * one_m * s.sqrt()));
    let bounds = (1..=stages)
        .map(|k| statistical + varrho.powi(k as i32 - 1) * relerr1)
        .collect();
    let k_bar = stage_count_bound(p, varrho)?;
    Ok(GeometricBound {
        bounds,
        statistical,
        alpha,
        varrho,
        k_bar,
    })
}

/// Estimates of the extreme restricted eigenvalues at one rank level. Both
/// values come from local searches: `theta_plus` can only underestimate
/// the supremum and `theta_minus` can only overestimate the infimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictedEigs {
    pub k: usize,
    pub theta_plus: f64,
    pub theta_minus: f64,
    /// Always true: the values are one-sided estimates.
    pub one_sided: bool,
    pub trials: usize,
}

/// Alternating sweeps per start.
const REC_SWEEPS: usize = 200;
const REC_TOL: f64 = 1e-13;

/// Matrix of `l -> A(L R^T)` for fixed `R` (columns indexed by the
/// column-major entries of the `n1 x k` factor `L`).
fn factor_map(op: &SamplingOperator, right: &Matrix, left_rows: usize, transpose: bool) -> Matrix {
    let k = right.ncols();
    let mut out = Matrix::zeros(op.len(), left_rows * k);
    for q in 0..k {
        for p in 0..left_rows {
            // X = e_p right_q^T (or its transpose when optimizing the right factor)
            let (rows, cols) = op.shape();
            let mut x = Matrix::zeros(rows, cols);
            for (j, v) in right.column(q).iter().enumerate() {
                if transpose {
                    x[(j, p)] = *v;
                } else {
                    x[(p, j)] = *v;
                }
            }
            out.set_column(q * left_rows + p, &op.apply_unchecked(&x));
        }
    }
    out
}

fn orthonormal_columns(m: &Matrix) -> Matrix {
    m.clone().qr().q()
}

/// One alternating search from `(l, r)`; returns the extreme Rayleigh
/// quotient of `A^* A` over `L R^T`.
fn alternate(op: &SamplingOperator, mut left: Matrix, mut right: Matrix, maximize: bool) -> Result<f64> {
    let (n1, n2) = op.shape();
    let k = left.ncols();
    let mut best = f64::NAN;
    for _ in 0..REC_SWEEPS {
        let prev = best;
        for side in 0..2 {
            let (fixed, rows, transpose) = if side == 0 { (&right, n1, false) } else { (&left, n2, true) };
            let basis = orthonormal_columns(fixed);
            let m = factor_map(op, &basis, rows, transpose);
            let (vals, vecs) = spectral::sym_eigen(&(m.transpose() * &m))?;
            let idx = if maximize { 0 } else { vals.len() - 1 };
            best = vals[idx].max(0.0);
            let factor = Matrix::from_column_slice(rows, k, vecs.column(idx).as_slice());
            if side == 0 {
                left = factor;
                right = basis;
            } else {
                right = factor;
                left = basis;
            }
        }
        if prev.is_finite() && (best - prev).abs() <= REC_TOL * (1.0 + best.abs()) {
            break;
        }
    }
    Ok(best)
}

/// Multi-start alternating estimate of `theta_+(k)` and `theta_-(k)`, the
/// extreme values of `||A(X)||^2 / ||X||_F^2` over `0 < rank X <= k`.
pub fn estimate_restricted_eigs(op: &SamplingOperator, k: usize, trials: usize, seed: u64) -> Result<RestrictedEigs> {
    op.validate()?;
    let (n1, n2) = op.shape();
    if k == 0 || k > n1.min(n2) {
        return Err(invalid(format!("rank level {k} outside 1..={}", n1.min(n2))));
    }
    if trials == 0 {
        return Err(invalid("at least one start is required"));
    }
    let mut theta_plus = 0.0f64;
    let mut theta_minus = f64::INFINITY;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut draw = |rows: usize| Matrix::from_fn(rows, k, |_, _| StandardNormal.sample(&mut rng));
        let (l0, r0) = (draw(n1), draw(n2));
        theta_plus = theta_plus.max(alternate(op, l0.clone(), r0.clone(), true)?);
        theta_minus = theta_minus.min(alternate(op, l0, r0, false)?);
    }
    Ok(RestrictedEigs {
        k,
        theta_plus,
        theta_minus,
        one_sided: true,
        trials,
    })
}

/// `(sqrt(l) / 2) sqrt(theta_+(l) / theta_-(k + l) - 1)`.
pub fn pi_upper_bound(theta_plus_l: f64, theta_minus_kl: f64, l: usize) -> Result<f64> {
    if !(theta_minus_kl > 0.0) {
        return Err(invalid("theta_-(k + l) must be positive"));
    }
    if !(theta_plus_l >= theta_minus_kl) {
        return Err(invalid("theta_+(l) must be >= theta_-(k + l)"));
    }
    Ok((l as f64).sqrt() / 2.0 * (theta_plus_l / theta_minus_kl - 1.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub holds: bool,
    /// `1 + 2 c^2 s / r - theta_+(s) / theta_-(2r + 2s)`.
    pub margin: f64,
}

/// Checks `theta_+(s) / theta_-(2r + 2s) <= 1 + 2 c^2 s / r`.
pub fn assumption_check(theta_plus_s: f64, theta_minus_2r2s: f64, r: usize, s: usize, c: f64) -> Result<AssumptionCheck> {
    if !(theta_plus_s > 0.0 && theta_minus_2r2s > 0.0 && r > 0 && s > 0 && c >= 0.0) {
        return Err(invalid("assumption check needs positive inputs"));
    }
    let margin = 1.0 + 2.0 * c * c * s as f64 / r as f64 - theta_plus_s / theta_minus_2r2s;
    Ok(AssumptionCheck {
        holds: margin >= 0.0,
        margin,
    })
}

/// Monotone-order report of a recursion: `a_tilde` nonincreasing,
/// `b_tilde` nondecreasing, `beta_tilde` and `gamma_tilde` strictly
/// decreasing.
pub fn recursion_is_ordered(seq: &BoundSeq) -> bool {
    let nonincr = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let nondecr = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let decr = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    nonincr(&seq.a_tilde) && nondecr(&seq.b_tilde) && decr(&seq.beta_tilde) && decr(&seq.gamma_tilde)
}
