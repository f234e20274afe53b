//! Penalty generators `phi`, the conjugate `psi*` of their restriction to
//! `[0, 1]`, and the closed-form weight update built from its subgradients.
//!
//! Two generators are provided:
//!
//! * `Phi1`: `phi(t) = t`, minimized on `[0, 1]` at `t* = 0`;
//! * `Phi2 { q, eps }`: `phi(t) = -t - ((q-1)/q) (1 - t + eps)^(q/(q-1)) + eps + (q-1)/q`
//!   on `t < 1 + eps`, minimized at `t* = eps`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::{self, Matrix, Vector};

/// Relative tolerance used to group equal singular values.
pub const TIE_TOL: f64 = 1e-12;

/// Slack allowed on `||W|| <= 1` checks.
pub const SPECTRAL_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PhiSpec {
    Phi1,
    Phi2 { q: f64, eps: f64 },
}

impl Default for PhiSpec {
    fn default() -> Self {
        PhiSpec::Phi2 { q: 0.5, eps: 1e-3 }
    }
}

/// Which endpoint of the subdifferential to pick at a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    #[default]
    Upper,
    Lower,
}

/// Closed interval `[lo, hi]` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SubgradInterval {
    fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn select(&self, rule: BoundaryRule) -> f64 {
        match rule {
            BoundaryRule::Upper => self.hi,
            BoundaryRule::Lower => self.lo,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl PhiSpec {
    pub fn phi2_default() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PhiSpec::Phi1 => Ok(()),
            PhiSpec::Phi2 { q, eps } => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(invalid(format!("phi2 requires 0 < q < 1, got {q}")));
                }
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(invalid(format!("phi2 requires 0 < eps < 1, got {eps}")));
                }
                Ok(())
            }
        }
    }

    /// The minimizer of `phi` on `[0, 1]`.
    pub fn t_star(&self) -> f64 {
        match *self {
            PhiSpec::Phi1 => 0.0,
            PhiSpec::Phi2 { eps, .. } => eps,
        }
    }

    pub fn phi_at_1(&self) -> f64 {
        self.value(1.0)
    }

    /// Left derivative of `phi` at 1.
    pub fn left_derivative_at_1(&self) -> f64 {
        match *self {
            PhiSpec::Phi1 => 1.0,
            PhiSpec::Phi2 { q, eps } => eps.powf(1.0 / (q - 1.0)) - 1.0,
        }
    }

    /// `phi(t)`, `+inf` outside the domain.
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            PhiSpec::Phi1 => t,
            PhiSpec::Phi2 { q, eps } => {
                if t >= 1.0 + eps {
                    return f64::INFINITY;
                }
                let k = (q - 1.0) / q;
                -t - k * (1.0 - t + eps).powf(q / (q - 1.0)) + eps + k
            }
        }
    }

    /// Maximizer over `[0, 1]` of `s t - phi(t)`; for `Phi1` at the kink
    /// `s = 1` the upper endpoint is returned.
    fn conj_argmax(&self, s: f64) -> f64 {
        match *self {
            PhiSpec::Phi1 => {
                if s >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PhiSpec::Phi2 { q, eps } => {
                if s + 1.0 <= 0.0 {
                    0.0
                } else {
                    (1.0 + eps - (s + 1.0).powf(q - 1.0)).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `psi*(s) = max_{t in [0,1]} { s t - phi(t) }`.
    pub fn psi_conj_value(&self, s: f64) -> f64 {
        match *self {
            PhiSpec::Phi1 => (s - 1.0).max(0.0),
            PhiSpec::Phi2 { .. } => {
                let t = self.conj_argmax(s);
                s * t - self.value(t)
            }
        }
    }

    /// The subdifferential of `psi*` at `s`.
    pub fn psi_conj_subgrad(&self, s: f64) -> SubgradInterval {
        match *self {
            PhiSpec::Phi1 => {
                if s > 1.0 {
                    SubgradInterval::point(1.0)
                } else if s < 1.0 {
                    SubgradInterval::point(0.0)
                } else {
                    SubgradInterval { lo: 0.0, hi: 1.0 }
                }
            }
            PhiSpec::Phi2 { q, eps } => {
                let upper = eps.powf(1.0 / (q - 1.0)) - 1.0;
                let lower = (1.0 + eps).powf(1.0 / (q - 1.0)) - 1.0;
                if s >= upper {
                    SubgradInterval::point(1.0)
                } else if s <= lower {
                    SubgradInterval::point(0.0)
                } else {
                    let v = 1.0 + eps - (s + 1.0).powf(q - 1.0);
                    SubgradInterval::point(v.clamp(0.0, 1.0))
                }
            }
        }
    }

    /// One-sided derivative `(psi*)'_+(s)`.
    pub fn psi_conj_right_derivative(&self, s: f64) -> f64 {
        self.psi_conj_subgrad(s).hi
    }

    /// One-sided derivative `(psi*)'_-(s)`.
    pub fn psi_conj_left_derivative(&self, s: f64) -> f64 {
        self.psi_conj_subgrad(s).lo
    }
}

/// Result of the weight update: the matrix `W` and its singular values `w`
/// expressed in the SVD frame of the input.
#[derive(Debug, Clone)]
pub struct WeightUpdate {
    pub w: Matrix,
    pub weights: Vector,
}

/// Groups consecutive nonincreasing singular values that agree to
/// [`TIE_TOL`] and returns, for each position, the index of its group leader.
fn tie_leaders(sigma: &Vector) -> Vec<usize> {
    let scale = sigma.iter().copied().fold(0.0, f64::max);
    let mut leaders = Vec::with_capacity(sigma.len());
    let mut leader = 0;
    for i in 0..sigma.len() {
        if i > 0 && (sigma[leader] - sigma[i]).abs() > TIE_TOL * scale {
            leader = i;
        }
        leaders.push(leader);
    }
    leaders
}

/// `W = U Diag(w) V^T` on the SVD frame of `xk` with
/// `w_i in d psi*(rho * sigma_i(xk))`; equal singular values receive equal
/// weights.
pub fn w_update(spec: &PhiSpec, xk: &Matrix, rho: f64, rule: BoundaryRule) -> Result<WeightUpdate> {
    spec.validate()?;
    if !(rho > 0.0) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    let dec = spectral::svd(xk)?;
    let sigma = &dec.singular_values;
    let leaders = tie_leaders(sigma);
    let weights = Vector::from_iterator(
        sigma.len(),
        leaders
            .iter()
            .map(|&l| spec.psi_conj_subgrad(rho * sigma[l]).select(rule)),
    );
    Ok(WeightUpdate {
        w: dec.with_values(&weights),
        weights,
    })
}

/// [`w_update`] for a symmetric positive semidefinite `xk`, built on its
/// eigenframe so that the weight matrix is symmetric. Eigenvalues are used
/// as singular values; tiny negative ones from round-off are read as zero.
pub fn w_update_psd(spec: &PhiSpec, xk: &Matrix, rho: f64, rule: BoundaryRule) -> Result<WeightUpdate> {
    spec.validate()?;
    if !(rho > 0.0) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    let sym = spectral::symmetrize(xk)?;
    let (values, vectors) = spectral::sym_eigen(&sym)?;
    let sigma = values.map(|l| l.max(0.0));
    let leaders = tie_leaders(&sigma);
    let weights = Vector::from_iterator(
        sigma.len(),
        leaders
            .iter()
            .map(|&l| spec.psi_conj_subgrad(rho * sigma[l]).select(rule)),
    );
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= weights[j];
    }
    let w = scaled * vectors.transpose();
    Ok(WeightUpdate {
        w: (&w + w.transpose()) * 0.5,
        weights,
    })
}

/// `phi(1) * rank(X)`.
pub fn variational_rank_value(spec: &PhiSpec, x: &Matrix) -> Result<f64> {
    Ok(spec.phi_at_1() * spectral::numerical_rank(x)? as f64)
}

/// `W* = U1 V1^T + t* U2 [I 0] V2^T`: attains `phi(1) rank(X)` with
/// `||X||_* = <W*, X>` and `||W*|| <= 1`.
pub fn variational_rank_witness(spec: &PhiSpec, x: &Matrix) -> Result<Matrix> {
    let dec = spectral::svd(x)?;
    let rank = spectral::rank_of_spectrum(dec.singular_values.as_slice());
    let t_star = spec.t_star();
    let w = Vector::from_iterator(
        dec.singular_values.len(),
        (0..dec.singular_values.len()).map(|i| if i < rank { 1.0 } else { t_star }),
    );
    Ok(dec.with_values(&w))
}

/// `sum_i phi(sigma_i(W)) + rho (||X||_* - <W, X>)`.
pub fn penalty_objective(spec: &PhiSpec, x: &Matrix, w: &Matrix, rho: f64) -> Result<f64> {
    if x.shape() != w.shape() {
        return Err(crate::error::shape_mismatch(
            format!("{:?}", x.shape()),
            format!("{:?}", w.shape()),
        ));
    }
    let sw = spectral::singular_values(w)?;
    if sw.iter().any(|&s| s > 1.0 + SPECTRAL_SLACK) {
        return Err(invalid("weight matrix has spectral norm above 1"));
    }
    let phi_sum: f64 = sw.iter().map(|&s| spec.value(s.min(1.0))).sum();
    Ok(phi_sum + rho * complementarity(x, w)?)
}

/// `||X||_* - <W, X>`, nonnegative whenever `||W|| <= 1`.
pub fn complementarity(x: &Matrix, w: &Matrix) -> Result<f64> {
    Ok(spectral::nuclear_norm(x)? - w.dot(x))
}
