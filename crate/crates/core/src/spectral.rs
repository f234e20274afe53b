//! Dense spectral primitives: SVD, proximal maps and projections built on
//! singular values or eigenvalues, and tangent-space projectors.
//!
//! Every function here is pure. The SVD backend is nalgebra's one-sided
//! Golub-Kahan implementation, which is deterministic for a fixed input.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, shape_mismatch, Error, Result};

/// Dense real matrix, column-major storage.
pub type Matrix = DMatrix<f64>;
/// Dense real vector.
pub type Vector = DVector<f64>;

/// Relative threshold (against the largest singular value) below which a
/// singular value counts as zero. Shared by every rank computation.
pub const RANK_TOL: f64 = 1e-10;

/// Symmetry tolerance for inputs to [`project_psd`] and friends.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Thin SVD `X = U * Diag(sigma) * Vt` with `sigma` nonincreasing.
///
/// For an `n1 x n2` input with `k = min(n1, n2)`, `u` is `n1 x k`,
/// `singular_values` has length `k` and `vt` is `k x n2`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        rebuild(&self.u, &self.singular_values, &self.vt)
    }

    /// Rebuilds `U * Diag(values) * Vt` for a replacement spectrum.
    pub fn with_values(&self, values: &Vector) -> Matrix {
        rebuild(&self.u, values, &self.vt)
    }
}

fn rebuild(u: &Matrix, values: &Vector, vt: &Matrix) -> Matrix {
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    scaled * vt
}

pub fn ensure_finite(x: &Matrix, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

/// Relative reconstruction and orthogonality error above which a
/// decomposition is rejected.
const SVD_CHECK_TOL: f64 = 1e-10;

/// Sweep limit of the one-sided Jacobi fallback.
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition with nonincreasing singular values.
///
/// nalgebra's bidiagonal SVD occasionally returns factors inconsistent
/// with the singular values on exactly rank-deficient inputs, so every
/// result is verified (reconstruction and orthogonality) and a one-sided
/// Jacobi decomposition is used when the check fails.
pub fn svd(x: &Matrix) -> Result<Svd> {
    ensure_finite(x, "svd input")?;
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("svd of an empty matrix"));
    }
    if let Some(mut dec) = x.clone().try_svd(true, true, 5.0 * f64::EPSILON, 0) {
        dec.sort_by_singular_values();
        if let (Some(u), Some(vt)) = (dec.u, dec.v_t) {
            let out = Svd {
                u,
                singular_values: dec.singular_values,
                vt,
            };
            if is_consistent(x, &out) {
                return Ok(out);
            }
        }
    }
    let out = jacobi_svd(x);
    if is_consistent(x, &out) {
        Ok(out)
    } else {
        Err(Error::Numerical("svd failed its consistency check".into()))
    }
}

fn orthonormality_error(q: &Matrix) -> f64 {
    let g = q.transpose() * q;
    (g - Matrix::identity(q.ncols(), q.ncols())).amax()
}

fn is_consistent(x: &Matrix, dec: &Svd) -> bool {
    let scale = x.norm().max(f64::MIN_POSITIVE);
    (dec.reconstruct() - x).norm() <= SVD_CHECK_TOL * scale
        && orthonormality_error(&dec.u) <= SVD_CHECK_TOL
        && orthonormality_error(&dec.vt.transpose()) <= SVD_CHECK_TOL
}

/// One-sided Jacobi SVD: rotates column pairs of `x` (or of `x^T` when
/// wide) until they are mutually orthogonal; the column norms are the
/// singular values. Left vectors of (near) zero singular values are filled
/// in with an orthonormal completion.
fn jacobi_svd(x: &Matrix) -> Svd {
    let wide = x.nrows() < x.ncols();
    let mut a = if wide { x.transpose() } else { x.clone() };
    let (m, n) = a.shape();
    let mut v = Matrix::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms[order[0]];
    let cutoff = (m.max(n) as f64) * f64::EPSILON * smax;
    let sigma = Vector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let rank = sigma.iter().filter(|&&s| s > cutoff && s > 0.0).count();
    let mut u = Matrix::zeros(m, n);
    for (k, &j) in order.iter().take(rank).enumerate() {
        u.set_column(k, &(a.column(j) / norms[j]));
    }
    if rank < n {
        // orthonormal completion: QR of [U_r | I] spans U_r first
        let mut basis = Matrix::zeros(m, rank + m);
        basis.columns_mut(0, rank).copy_from(&u.columns(0, rank));
        basis.columns_mut(rank, m).copy_from(&Matrix::identity(m, m));
        let q = basis.qr().q();
        for k in rank..n {
            u.set_column(k, &q.column(k));
        }
    }
    let mut vs = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        vs.set_column(k, &v.column(j));
    }
    if wide {
        Svd {
            u: vs,
            singular_values: sigma,
            vt: u.transpose(),
        }
    } else {
        Svd {
            u,
            singular_values: sigma,
            vt: vs.transpose(),
        }
    }
}

/// Singular values in nonincreasing order, from a verified decomposition.
pub fn singular_values(x: &Matrix) -> Result<Vector> {
    Ok(svd(x)?.singular_values)
}

pub fn nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(singular_values(x)?.sum())
}

pub fn spectral_norm(x: &Matrix) -> Result<f64> {
    Ok(singular_values(x)?.iter().copied().fold(0.0, f64::max))
}

/// Count of singular values above `RANK_TOL * sigma_max`. Zero iff `x == 0`.
pub fn numerical_rank(x: &Matrix) -> Result<usize> {
    Ok(rank_of_spectrum(singular_values(x)?.as_slice()))
}

/// Numerical rank of an already computed nonnegative spectrum.
pub fn rank_of_spectrum(values: &[f64]) -> usize {
    let smax = values.iter().copied().fold(0.0, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Applies a scalar map to each singular value and rebuilds the matrix.
pub fn map_singular_values(x: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let dec = svd(x)?;
    let mapped = dec.singular_values.map(f);
    Ok(dec.with_values(&mapped))
}

/// Singular value soft-thresholding: the minimizer of
/// `tau * ||Z||_* + 0.5 * ||Z - X||_F^2`.
pub fn prox_nuclear(x: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(invalid(format!("threshold must be nonnegative, got {tau}")));
    }
    if tau == 0.0 {
        ensure_finite(x, "prox input")?;
        return Ok(x.clone());
    }
    map_singular_values(x, |s| (s - tau).max(0.0))
}

/// Frobenius-nearest point of `{Z : ||Z|| <= radius}`.
pub fn project_spectral_ball(x: &Matrix, radius: f64) -> Result<Matrix> {
    if !(radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    map_singular_values(x, |s| s.min(radius))
}

pub fn is_symmetric(x: &Matrix, tol: f64) -> bool {
    if x.nrows() != x.ncols() {
        return false;
    }
    let scale = 1.0 + x.amax();
    let n = x.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (x[(i, j)] - x[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Checks symmetry to [`SYMMETRY_TOL`] and returns `(X + X^T) / 2`.
pub fn symmetrize(x: &Matrix) -> Result<Matrix> {
    ensure_finite(x, "symmetric input")?;
    if x.nrows() != x.ncols() {
        return Err(shape_mismatch("square matrix", format!("{}x{}", x.nrows(), x.ncols())));
    }
    if !is_symmetric(x, SYMMETRY_TOL) {
        return Err(invalid("matrix is not symmetric within tolerance"));
    }
    Ok((x + x.transpose()) * 0.5)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in
/// nonincreasing order. The input is assumed symmetric.
pub fn sym_eigen(x: &Matrix) -> Result<(Vector, Matrix)> {
    let n = x.nrows();
    let eig = SymmetricEigen::try_new(x.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Applies a scalar map to the eigenvalues of a symmetric matrix.
pub(crate) fn map_eigenvalues(x: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(x)?;
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[j]);
    }
    let out = scaled * vectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Frobenius-nearest positive semidefinite matrix.
pub fn project_psd(x: &Matrix) -> Result<Matrix> {
    let sym = symmetrize(x)?;
    map_eigenvalues(&sym, |l| l.max(0.0))
}

/// Euclidean projection of `v` onto the ball of `radius` around `center`.
pub fn project_l2_ball(v: &Vector, center: &Vector, radius: f64) -> Result<Vector> {
    if v.len() != center.len() {
        return Err(shape_mismatch(center.len(), v.len()));
    }
    if !(radius >= 0.0) {
        return Err(invalid(format!("radius must be nonnegative, got {radius}")));
    }
    let diff = v - center;
    let norm = diff.norm();
    if norm <= radius {
        Ok(v.clone())
    } else {
        Ok(center + diff * (radius / norm))
    }
}

/// Tangent space of the rank-`r` manifold at a reference matrix, described by
/// orthonormal bases of its leading left and right singular subspaces.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    pub u1: Matrix,
    pub v1: Matrix,
}

impl TangentSpace {
    /// Builds the tangent space from the rank-`rank` SVD of `m`.
    pub fn at(m: &Matrix, rank: usize) -> Result<Self> {
        let dec = svd(m)?;
        let k = dec.singular_values.len();
        if rank > k {
            return Err(invalid(format!("rank {rank} exceeds min dimension {k}")));
        }
        Ok(Self {
            u1: dec.u.columns(0, rank).into_owned(),
            v1: dec.vt.rows(0, rank).transpose(),
        })
    }

    pub fn from_bases(u1: Matrix, v1: Matrix) -> Result<Self> {
        if u1.ncols() != v1.ncols() {
            return Err(shape_mismatch(u1.ncols(), v1.ncols()));
        }
        Ok(Self { u1, v1 })
    }

    /// `P_T(Z) = U1 U1^T Z + Z V1 V1^T - U1 U1^T Z V1 V1^T`, or its
    /// complement `Z - P_T(Z)` when `complement` is set.
    pub fn project(&self, z: &Matrix, complement: bool) -> Result<Matrix> {
        if z.nrows() != self.u1.nrows() || z.ncols() != self.v1.nrows() {
            return Err(shape_mismatch(
                format!("{}x{}", self.u1.nrows(), self.v1.nrows()),
                format!("{}x{}", z.nrows(), z.ncols()),
            ));
        }
        let ut_z = self.u1.transpose() * z;
        let left = &self.u1 * &ut_z;
        let z_v = z * &self.v1;
        let right = &z_v * self.v1.transpose();
        let both = &self.u1 * (&ut_z * &self.v1) * self.v1.transpose();
        let pt = left + right - both;
        Ok(if complement { z - pt } else { pt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn diag_rect(values: &[f64], rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[1.0, 1.0, 1.0]);

        let d = diag_rect(&[1.0, 3.0], 2, 4);
        let s = svd(&d).unwrap();
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstruction_and_orthogonality() {
        let x = randn(5, 7, 11);
        let s = svd(&x).unwrap();
        let err = (s.reconstruct() - &x).norm();
        assert!(err <= 1e-8 * (1.0 + x.norm()));
        let utu = s.u.transpose() * &s.u;
        assert!((utu - Matrix::identity(5, 5)).amax() < 1e-10);
        let vvt = &s.vt * s.vt.transpose();
        assert!((vvt - Matrix::identity(5, 5)).amax() < 1e-10);
        for w in s.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
    }

    #[test]
    fn svd_of_rank_deficient_products() {
        // exact low-rank products, the inputs on which the bidiagonal
        // routine can return inconsistent factors
        for seed in 0..400u64 {
            let (n1, n2) = (2 + (seed % 11) as usize, 2 + (seed / 11 % 13) as usize);
            let r = (seed % 3) as usize % n1.min(n2);
            let x = randn(n1, r, seed) * randn(r, n2, seed + 1000);
            let s = svd(&x).unwrap();
            assert!((s.reconstruct() - &x).norm() <= 1e-10 * x.norm().max(1e-300), "seed {seed}");
            assert_eq!(rank_of_spectrum(s.singular_values.as_slice()), r);
        }
    }

    #[test]
    fn jacobi_fallback_matches_on_all_shapes() {
        for (rows, cols, r) in [(6, 4, 4), (4, 6, 2), (5, 5, 0), (7, 3, 1), (1, 5, 1)] {
            let x = randn(rows, r, 3) * randn(r, cols, 4);
            let j = jacobi_svd(&x);
            assert!(is_consistent(&x, &j), "{rows}x{cols} rank {r}");
            assert_eq!(j.u.shape(), (rows, rows.min(cols)));
            assert_eq!(j.vt.shape(), (rows.min(cols), cols));
            let reference = svd(&x).unwrap().singular_values;
            assert!((j.singular_values - reference).amax() < 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut x = Matrix::zeros(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn prox_nuclear_diagonal_and_zero() {
        let x = diag_rect(&[3.0, 1.0], 2, 2);
        let z = prox_nuclear(&x, 1.0).unwrap();
        assert!((z - diag_rect(&[2.0, 0.0], 2, 2)).amax() < 1e-12);
        let x = randn(3, 4, 2);
        assert_eq!(prox_nuclear(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn prox_nuclear_is_locally_optimal() {
        let x = randn(4, 6, 3);
        let tau = 0.5;
        let z = prox_nuclear(&x, tau).unwrap();
        let obj = |m: &Matrix| tau * nuclear_norm(m).unwrap() + 0.5 * (m - &x).norm_squared();
        let base = obj(&z);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let dir = Matrix::from_fn(4, 6, |_, _| StandardNormal.sample(&mut rng));
            let trial = &z + dir * 1e-3;
            assert!(obj(&trial) >= base - 1e-12);
        }
    }

    #[test]
    fn prox_nuclear_subgradient_identity() {
        let x = randn(5, 6, 4);
        let tau = 0.7;
        let z = prox_nuclear(&x, tau).unwrap();
        let lhs = (&x - &z).dot(&z);
        let rhs = tau * nuclear_norm(&z).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()));
        assert!(spectral_norm(&(&x - &z)).unwrap() <= tau * (1.0 + 1e-10));
    }

    #[test]
    fn spectral_ball_projection() {
        let x = diag_rect(&[5.0, 1.0], 2, 2);
        let p = project_spectral_ball(&x, 2.0).unwrap();
        assert!((p - diag_rect(&[2.0, 1.0], 2, 2)).amax() < 1e-12);

        let inside = diag_rect(&[0.5, 0.1], 2, 3);
        assert!((project_spectral_ball(&inside, 1.0).unwrap() - &inside).amax() < 1e-14);

        let x = randn(4, 5, 5);
        let once = project_spectral_ball(&x, 1.0).unwrap();
        let twice = project_spectral_ball(&once, 1.0).unwrap();
        assert!((&once - &twice).amax() < 1e-10);
    }

    #[test]
    fn psd_projection() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, -1.0]));
        let p = project_psd(&d).unwrap();
        let expect = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        assert!((p - expect).amax() < 1e-12);

        let g = randn(4, 4, 6);
        let psd = &g * g.transpose();
        assert!((project_psd(&psd).unwrap() - &psd).amax() < 1e-10);

        let a = randn(5, 5, 7);
        let sym = (&a + a.transpose()) * 0.5;
        let p = project_psd(&sym).unwrap();
        assert!((&sym - &p).dot(&p).abs() < 1e-8);
        let (vals, _) = sym_eigen(&p).unwrap();
        assert!(vals.iter().all(|&l| l >= -1e-10));
    }

    #[test]
    fn psd_projection_rejects_asymmetry() {
        let mut x = Matrix::identity(3, 3);
        x[(0, 2)] = 0.5;
        assert!(matches!(project_psd(&x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn l2_ball_projection() {
        let c = Vector::zeros(2);
        let v = Vector::from_vec(vec![3.0, 4.0]);
        let p = project_l2_ball(&v, &c, 1.0).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let inside = Vector::from_vec(vec![0.1, 0.2]);
        assert_eq!(project_l2_ball(&inside, &c, 1.0).unwrap(), inside);
        assert!(project_l2_ball(&v, &Vector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn tangent_projection_cases() {
        let m = randn(5, 2, 8) * randn(2, 6, 9);
        let t = TangentSpace::at(&m, 2).unwrap();
        let inner = &t.u1 * randn(2, 2, 10) * t.v1.transpose();
        assert!((t.project(&inner, false).unwrap() - &inner).amax() < 1e-10);

        // rows orthogonal to U1 and columns orthogonal to V1
        let pu = Matrix::identity(5, 5) - &t.u1 * t.u1.transpose();
        let pv = Matrix::identity(6, 6) - &t.v1 * t.v1.transpose();
        let outer = &pu * randn(5, 6, 11) * &pv;
        assert!(t.project(&outer, false).unwrap().amax() < 1e-10);

        let z = randn(5, 6, 12);
        let a = t.project(&z, false).unwrap();
        let b = t.project(&z, true).unwrap();
        assert!(a.dot(&b).abs() < 1e-10);
        assert!((&a + &b - &z).amax() < 1e-12);
        assert!((t.project(&a, false).unwrap() - &a).amax() < 1e-10);
    }

    #[test]
    fn rank_counts() {
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)).unwrap(), 0);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-14]));
        assert_eq!(numerical_rank(&d).unwrap(), 1);
        let x = randn(40, 3, 13) * randn(3, 40, 14);
        assert_eq!(numerical_rank(&x).unwrap(), 3);
    }
}
