//! Independent reference solvers and helpers shared by the integration
//! tests. The oracles use nalgebra decompositions directly and a
//! primal-dual hybrid gradient method, sharing no code with the library
//! solver beyond the operator's `apply` and `adjoint_apply`.

#![allow(dead_code)]

use msrelax::solver::{PsdCompletionProblem, SensingProblem};
use msrelax::{Matrix, SamplingOperator, Vector};
use nalgebra::{SymmetricEigen, SVD};

/// A constraint block `y = K_i X` with its projection set.
enum Set {
    Ball { center: Vector, radius: f64 },
    Point(Vector),
    Upper(Vector),
}

impl Set {
    fn project(&self, v: &Vector) -> Vector {
        match self {
            Set::Ball { center, radius } => {
                let d = v - center;
                let n = d.norm();
                if n <= *radius {
                    v.clone()
                } else {
                    center + d * (*radius / n)
                }
            }
            Set::Point(p) => p.clone(),
            Set::Upper(g) => v.zip_map(g, |a, b| a.min(b)),
        }
    }

    fn violation(&self, v: &Vector) -> f64 {
        (v - self.project(v)).norm()
    }
}

struct Block<'a> {
    op: &'a SamplingOperator,
    set: Set,
}

fn svd_map(x: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let svd = SVD::new(x.clone(), true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let s = svd.singular_values.map(f);
    u * Matrix::from_diagonal(&s) * vt
}

fn psd_project(x: &Matrix) -> Matrix {
    let sym = (x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let m = &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&m + m.transpose()) * 0.5
}

/// Nuclear norm from an independent SVD.
pub fn nuclear(x: &Matrix) -> f64 {
    SVD::new(x.clone(), false, false).singular_values.sum()
}

fn op_norm_sq(blocks: &[Block], shape: (usize, usize)) -> f64 {
    let mut x = Matrix::from_fn(shape.0, shape.1, |i, j| ((i * 7 + j * 3) as f64).sin() + 0.5);
    let mut lam = 0.0;
    for _ in 0..500 {
        x /= x.norm();
        let mut y = Matrix::zeros(shape.0, shape.1);
        for b in blocks {
            y += b.op.adjoint_apply(&b.op.apply(&x).unwrap()).unwrap();
        }
        lam = y.norm();
        x = y;
    }
    lam
}

/// Result of a reference solve.
pub struct OracleResult {
    pub x: Matrix,
    pub objective: f64,
    /// Largest distance of any constraint block image from its set.
    pub violation: f64,
}

/// Chambolle-Pock iterations for `min f(X) + sum_i g_i(K_i X)` with the
/// `g_i` indicator functions; `prox_f(Z, tau)` is the prox of `tau f`.
fn pdhg(
    blocks: &[Block],
    shape: (usize, usize),
    prox_f: impl Fn(&Matrix, f64) -> Matrix,
    objective: impl Fn(&Matrix) -> f64,
    iters: usize,
) -> OracleResult {
    let l = op_norm_sq(blocks, shape).sqrt();
    let tau = 0.95 / l;
    let sigma = 0.95 / l;
    let mut x = Matrix::zeros(shape.0, shape.1);
    let mut xbar = x.clone();
    let mut ys: Vec<Vector> = blocks.iter().map(|b| Vector::zeros(b.op.len())).collect();
    for _ in 0..iters {
        let mut kty = Matrix::zeros(shape.0, shape.1);
        for (b, y) in blocks.iter().zip(ys.iter_mut()) {
            let v = &*y + b.op.apply(&xbar).unwrap() * sigma;
            // Moreau: prox of sigma g* = v - sigma * P_C(v / sigma)
            *y = &v - b.set.project(&(&v / sigma)) * sigma;
            kty += b.op.adjoint_apply(y).unwrap();
        }
        let x_new = prox_f(&(&x - kty * tau), tau);
        xbar = &x_new * 2.0 - &x;
        x = x_new;
    }
    let violation = blocks
        .iter()
        .map(|b| b.set.violation(&b.op.apply(&x).unwrap()))
        .fold(0.0, f64::max);
    OracleResult { objective: objective(&x), x, violation }
}

/// Reference solution of the sensing stage problem with weight `w`.
pub fn sensing_oracle(p: &SensingProblem, w: &Matrix, iters: usize) -> OracleResult {
    let (fixed_op, d) = p.fixed_operator().unwrap();
    let mut blocks = vec![Block {
        op: &p.op,
        set: Set::Ball { center: p.b.clone(), radius: p.delta },
    }];
    if !fixed_op.is_empty() {
        blocks.push(Block { op: &fixed_op, set: Set::Point(d) });
    }
    let radius = p.spectral_radius;
    let prox = |z: &Matrix, tau: f64| svd_map(&(z + w * tau), |s| (s - tau).max(0.0).min(radius));
    let obj = |x: &Matrix| nuclear(x) - w.dot(x);
    pdhg(&blocks, p.shape(), prox, obj, iters)
}

/// Reference solution of the PSD completion stage problem with weight `w`.
pub fn psd_oracle(p: &PsdCompletionProblem, w: &Matrix, iters: usize) -> OracleResult {
    let mut blocks = vec![Block {
        op: &p.op,
        set: Set::Ball { center: p.b.clone(), radius: p.delta },
    }];
    if let Some(eq) = &p.eq {
        if !eq.op.is_empty() {
            blocks.push(Block { op: &eq.op, set: Set::Point(eq.rhs.clone()) });
        }
    }
    if let Some(ineq) = &p.ineq {
        if !ineq.op.is_empty() {
            blocks.push(Block { op: &ineq.op, set: Set::Upper(ineq.rhs.clone()) });
        }
    }
    let c = Matrix::identity(p.n, p.n) - w;
    let prox = |z: &Matrix, tau: f64| psd_project(&(z - &c * tau));
    let obj = |x: &Matrix| x.trace() - w.dot(x);
    pdhg(&blocks, (p.n, p.n), prox, obj, iters)
}

/// A weight matrix with spectral norm `norm` built from a seeded matrix.
pub fn weight_matrix(rows: usize, cols: usize, seed: u64, norm: f64, symmetric: bool) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) as f64 + seed as f64 * 1.618).sin());
    if symmetric {
        m = (&m + m.transpose()) * 0.5;
    }
    let s = SVD::new(m.clone(), false, false).singular_values.max();
    m * (norm / s)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Extreme values of `q(u, v) = ||A(u v^T)||^2 / ||u v^T||_F^2` found by
/// adaptive random search: from each of `restarts` Gaussian starts, Gaussian
/// perturbations of `(u, v)` are accepted when they improve `q`, with the
/// step length adapted by the one-fifth success rule. `samples` counts the
/// evaluations per extreme across all restarts.
pub fn rank_one_search(op: &SamplingOperator, samples: usize, restarts: usize, seed: u64) -> (f64, f64) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = op.shape();
    let q = |u: &Vector, v: &Vector| {
        let x = u * v.transpose();
        op.apply(&x).unwrap().norm_squared() / x.norm_squared()
    };
    let mut extremes = [0.0f64, f64::INFINITY];
    for (side, best) in extremes.iter_mut().enumerate() {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        for _ in 0..restarts {
            let mut u = Vector::from_fn(rows, |_, _| StandardNormal.sample(&mut rng));
            let mut v = Vector::from_fn(cols, |_, _| StandardNormal.sample(&mut rng));
            u /= u.norm();
            v /= v.norm();
            let mut cur = q(&u, &v);
            let mut step = 0.5;
            for _ in 1..samples / restarts {
                let mut du = Vector::from_fn(rows, |_, _| StandardNormal.sample(&mut rng));
                let mut dv = Vector::from_fn(cols, |_, _| StandardNormal.sample(&mut rng));
                du = &u + du * step;
                dv = &v + dv * step;
                let cand = q(&du, &dv);
                if sign * cand > sign * cur {
                    cur = cand;
                    u = &du / du.norm();
                    v = &dv / dv.norm();
                    step *= 1.5;
                } else {
                    step *= 1.5f64.powf(-0.25);
                }
                step = step.max(1e-12);
            }
            *best = if side == 0 { best.max(cur) } else { best.min(cur) };
        }
    }
    (extremes[0], extremes[1])
}
