mod common;

use msrelax::experiments::{gen_sensing, GeneratorSpec};
use msrelax::theory::*;
use msrelax::PhiSpec;
use proptest::prelude::*;

/// Relative agreement required between the restricted-eigenvalue
/// estimator and the random-search reference.
const REC_TOL: f64 = 0.02;

fn phi_of(i: usize) -> PhiSpec {
    if i == 0 {
        PhiSpec::Phi1
    } else {
        PhiSpec::phi2_default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xi_and_gamma_cap_increase(r in 1usize..20, s in 1usize..20, c in 0.0f64..1.4, t in 0.0f64..1.0, dt in 1e-6f64..0.5) {
        let p = RECParams::normalized(r, s, c, 5.0).unwrap();
        let t0 = t.min(0.999 / c.max(1e-9));
        let t1 = (t0 + dt).min(0.9999 / c.max(1e-9));
        prop_assume!(t1 > t0);
        prop_assert!(xi(&p, t1).unwrap() > xi(&p, t0).unwrap());
        prop_assert!(gamma_cap(&p, t1).unwrap() > gamma_cap(&p, t0).unwrap());
        // closed form against a direct evaluation
        let direct = (1.0 + r as f64 * t0 * t0 / (2.0 * s as f64)).sqrt() / (1.0 - c * t0);
        prop_assert!((xi(&p, t0).unwrap() / xi(&p, 0.0).unwrap() - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn ratios_are_scale_free(phi in 0usize..2, c in 0.0f64..0.9, alpha in 3.0f64..10.0, f in 0.3f64..0.9,
                             d in 0.1f64..10.0, tp in 0.1f64..10.0, tm in 0.1f64..10.0) {
        let phi = phi_of(phi);
        let p = RECParams::normalized(10, 5, c, alpha).unwrap();
        let q = p.rescaled(d, tp, tm);
        let rho = |p: &RECParams| f / xi(p, GAMMA0).unwrap();
        let a = gamma_tilde_recursion(&p, &phi, rho(&p), &[], 1);
        let b = gamma_tilde_recursion(&q, &phi, rho(&q), &[], 1);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.xi_ratios().iter().zip(b.xi_ratios()) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                }
                for (x, y) in a.gamma_tilde.iter().zip(&b.gamma_tilde) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one scale failed: {:?} vs {:?}", a.err(), b.err()),
        }
    }

    #[test]
    fn admissible_rho1_gives_ordered_recursions(phi in 0usize..2, c in 0.0f64..0.9, alpha in 4.5f64..10.0, pos in 0.05f64..0.95) {
        let phi = phi_of(phi);
        let p = RECParams::normalized(10, 5, c, alpha).unwrap();
        let adm = rho1_admissible(&p, &phi).unwrap();
        let (lo, hi) = adm.interval.expect("alpha >= 4.5 admits a first penalty");
        let rho1 = lo * (hi / lo).powf(pos);
        prop_assert!(rho1_condition(&p, &phi, rho1).unwrap());
        let seq = gamma_tilde_recursion(&p, &phi, rho1, &[], 4).unwrap();
        prop_assert!(recursion_is_ordered(&seq), "{seq:?}");
        prop_assert!(seq.gamma_tilde.iter().all(|&g| g >= 0.0));
        // every ratio stays above the statistical floor and below one
        let floor = xi(&p, 0.0).unwrap() / seq.xi[0];
        prop_assert!(seq.xi_ratios().iter().all(|&v| v < 1.0 && v >= floor));
    }
}

#[test]
fn admissible_interval_is_tight() {
    for phi in [PhiSpec::Phi1, PhiSpec::phi2_default()] {
        let p = RECParams::normalized(10, 5, 0.5, 4.5).unwrap();
        let (lo, hi) = rho1_admissible(&p, &phi).unwrap().interval.unwrap();
        for (inside, outside) in [(lo * 1.001, lo * 0.999), (hi * 0.999, hi * 1.001)] {
            assert!(rho1_condition(&p, &phi, inside).unwrap());
            assert!(!rho1_condition(&p, &phi, outside).unwrap());
        }
    }
}

#[test]
fn failed_hypothesis_is_reported_not_raised() {
    let p = RECParams::normalized(10, 5, 0.5, 1.5).unwrap();
    let adm = rho1_admissible(&p, &PhiSpec::Phi1).unwrap();
    assert!(adm.interval.is_none());
    assert!(adm.diagnostic.unwrap().contains("sigma_r"));
    assert!(gamma_tilde_recursion(&p, &PhiSpec::Phi1, 0.5, &[], 2).is_err());
}

#[test]
fn mu_outside_its_range_is_rejected() {
    let p = RECParams::normalized(10, 5, 0.3, 4.5).unwrap();
    let rho1 = 0.6 / xi(&p, GAMMA0).unwrap();
    let seq = gamma_tilde_recursion(&p, &PhiSpec::Phi1, rho1, &[], 2).unwrap();
    let cap = seq.xi[0] / seq.xi[1];
    assert!(gamma_tilde_recursion(&p, &PhiSpec::Phi1, rho1, &[0.5 * (1.0 + cap)], 2).is_ok());
    assert!(gamma_tilde_recursion(&p, &PhiSpec::Phi1, rho1, &[cap * 1.01], 2).is_err());
    assert!(gamma_tilde_recursion(&p, &PhiSpec::Phi1, rho1, &[0.99], 2).is_err());
}

#[test]
fn stage_counts_from_a_contraction_factor() {
    // ceil(log((1 - c gamma_0) / sqrt(1 + gamma_0^2 / 2)) / log(0.7) + 1) with s = r
    let oracle = |c: f64| {
        let g = std::f64::consts::FRAC_1_SQRT_2;
        (((1.0 - c * g) / (1.0 + g * g / 2.0).sqrt()).ln() / 0.7f64.ln() + 1.0).ceil() as usize
    };
    for c in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let p = RECParams::normalized(4, 4, c, 5.0).unwrap();
        assert_eq!(stage_count_bound(&p, 0.7).unwrap(), oracle(c));
    }
    assert!(stage_count_bound(&RECParams::normalized(4, 4, 0.3, 5.0).unwrap(), 1.0).is_err());
}

#[test]
fn geometric_bound_decays_to_the_statistical_term() {
    let p = RECParams::normalized(10, 5, 0.3, 6.0).unwrap();
    let rho1 = 0.6 / xi(&p, GAMMA0).unwrap();
    let seq = gamma_tilde_recursion(&p, &PhiSpec::Phi1, rho1, &[], 1).unwrap();
    let g = geometric_bound(&p, &seq, 1.0, 6).unwrap();
    assert!(g.varrho > 0.0 && g.varrho < 1.0);
    assert!(g.bounds.windows(2).all(|w| w[1] < w[0]));
    assert!((g.bounds[0] - (g.statistical + 1.0)).abs() < 1e-12);
    assert!((g.bounds[5] - g.statistical - g.varrho.powi(5)).abs() < 1e-12);
}

#[test]
fn restricted_eigenvalues_match_random_search() {
    for seed in 0..3u64 {
        let g = gen_sensing(&GeneratorSpec::sensing(6, 6, 1, seed).with_m(20)).unwrap();
        let est = estimate_restricted_eigs(&g.problem.op, 1, 30, seed).unwrap();
        let (hi, lo) = common::rank_one_search(&g.problem.op, 100_000, 25, seed);
        // the estimator is a local search too, so neither side dominates;
        // both must land on the same extremes
        assert!((est.theta_plus - hi).abs() <= REC_TOL * hi, "{} vs {hi}", est.theta_plus);
        assert!((est.theta_minus - lo).abs() <= REC_TOL * lo, "{} vs {lo}", est.theta_minus);
    }
}

#[test]
fn restricted_eigenvalues_of_a_full_mask_are_one() {
    let idx = (0..4).flat_map(|j| (0..5).map(move |i| (i, j))).collect();
    let op = msrelax::SamplingOperator::mask(5, 4, idx).unwrap();
    let est = estimate_restricted_eigs(&op, 2, 3, 0).unwrap();
    assert!((est.theta_plus - 1.0).abs() < 1e-12 && (est.theta_minus - 1.0).abs() < 1e-12);
    assert!(estimate_restricted_eigs(&op, 5, 3, 0).is_err());
}

#[test]
fn growth_condition_from_the_rip_regime() {
    let d = 2f64.sqrt() - 1.0 - 1e-6;
    let check = assumption_check(1.0 + d, 1.0 - d, 3, 3, 0.843).unwrap();
    assert!(check.holds);
    assert!(check.margin > 0.0);
    // the constant is close to the smallest one that works
    assert!(!assumption_check(1.0 + d, 1.0 - d, 3, 3, 0.84).unwrap().holds);
}

#[test]
fn pi_bound_closed_form() {
    let v = pi_upper_bound(3.0, 1.0, 4).unwrap();
    assert!((v - 2f64.sqrt()).abs() < 1e-15);
    assert!(pi_upper_bound(0.5, 1.0, 4).is_err());
}
