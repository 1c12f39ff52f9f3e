mod common;

use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use robusttraj::dynamics::contact_jacobians;
use robusttraj::model::{ContactPoint, Model, Scenario};
use robusttraj::oracle::{suf_bruteforce, DirectionSet};
use robusttraj::robustness::{
    base_wrench_residual, contact_suf_residuals, evaluate_suf_at_knot, ktau_implicit, smooth_norm,
    torque_suf_residuals, PolytopeRows, NORM_SMOOTHING,
};
use robusttraj::transcription::default_seed;

struct Knot {
    scenario: Scenario,
    contacts: Vec<ContactPoint>,
    q: Vec<f64>,
    tau: Vec<f64>,
    lambda: Vec<f64>,
}

/// A standing knot of a bundled scenario with torques drawn from `tau_frac`
/// of the limits and contact forces perturbed inside the friction pyramid.
fn knot(name: &str, tau_frac: &[f64], normal_gain: &[f64], tangential: &[f64]) -> Knot {
    let scenario = common::scenario(name);
    let contacts = scenario.contacts();
    let seed = default_seed(&scenario);
    let q = seed.q[0].clone();
    let tau = scenario
        .model
        .joints
        .iter()
        .zip(tau_frac)
        .map(|(j, f)| j.tau_limit * f)
        .collect();
    let mut lambda = vec![0.0; 3 * contacts.len()];
    for (i, c) in contacts.iter().enumerate() {
        let fn_ = seed.lambda[0][3 * i..3 * i + 3].iter().zip(c.normal.iter()).map(|(a, b)| a * b).sum::<f64>();
        let n = fn_ * normal_gain[i];
        let lim = c.mu / 2f64.sqrt() * n;
        let f = c.normal * n + c.tangent * (tangential[2 * i] * lim) + c.bitangent * (tangential[2 * i + 1] * lim);
        lambda[3 * i..3 * i + 3].copy_from_slice(f.as_slice());
    }
    Knot {
        scenario,
        contacts,
        q,
        tau,
        lambda,
    }
}

fn arm() -> Model {
    common::model("fixed_arm")
}

fn scenario_name() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("flat"), Just("steps"), Just("ramp")]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_norm_never_understates(x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
        let v = Vector3::new(x, y, z);
        prop_assert!(smooth_norm(&v) >= v.norm());
        prop_assert!(smooth_norm(&v) <= v.norm() + NORM_SMOOTHING);
    }

    #[test]
    fn response_maps_are_homogeneous(
        s in 0.01f64..20.0,
        rho in 0.0f64..50.0,
        gains in prop::collection::vec(-5.0f64..5.0, 36),
        tau_frac in prop::collection::vec(-0.5f64..0.5, 11),
    ) {
        let k = knot("flat", &tau_frac, &[1.0; 4], &[0.0; 8]);
        let model = &k.scenario.model;
        let jac = contact_jacobians(model, &k.q);
        let kl = DMatrix::from_row_slice(model.ns(), 3, &gains);
        let nb = model.n_base();
        let scaled = &kl * s;
        let kt = ktau_implicit(&jac, nb, &kl, rho);
        prop_assert!((ktau_implicit(&jac, nb, &scaled, s * rho) - &kt * s).amax() <= 1e-11 * (1.0 + s * kt.amax()));
        let base = base_wrench_residual(&jac, nb, &kl, rho);
        prop_assert!((base_wrench_residual(&jac, nb, &scaled, s * rho) - &base * s).amax() <= 1e-11 * (1.0 + s * base.amax()));

        // norm terms scale by s up to the smoothing
        let rows = PolytopeRows::new(model, &k.contacts);
        let zero = DMatrix::zeros(model.ns(), 3);
        let lin_t = torque_suf_residuals(&rows, &jac, nb, &k.tau, &zero, 0.0).add_scalar(-NORM_SMOOTHING);
        let t1 = torque_suf_residuals(&rows, &jac, nb, &k.tau, &kl, rho) - &lin_t;
        let ts = torque_suf_residuals(&rows, &jac, nb, &k.tau, &scaled, s * rho) - &lin_t;
        let tol = (1.0 + s) * NORM_SMOOTHING + 1e-9 * (1.0 + s * t1.amax());
        prop_assert!((ts - &t1 * s).amax() <= tol);
        let lin_c = contact_suf_residuals(&rows, &k.lambda, &zero).add_scalar(-NORM_SMOOTHING);
        let c1 = contact_suf_residuals(&rows, &k.lambda, &kl) - &lin_c;
        let cs = contact_suf_residuals(&rows, &k.lambda, &scaled) - &lin_c;
        prop_assert!((cs - &c1 * s).amax() <= (1.0 + s) * NORM_SMOOTHING + 1e-9 * (1.0 + s * c1.amax()));
    }

    #[test]
    fn direction_sets_are_unit_antipodal_and_reproducible(n in 1usize..200, seed in any::<u64>()) {
        let set = DirectionSet::new(n, seed);
        prop_assert_eq!(set.len() % 2, 0);
        prop_assert!(set.len() >= n);
        for d in &set.directions {
            prop_assert!((d.norm() - 1.0).abs() <= 1e-12);
            prop_assert!(set.directions.iter().any(|e| (d + e).norm() <= 1e-12));
        }
        prop_assert_eq!(set.directions, DirectionSet::new(n, seed).directions);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn more_directions_never_raise_the_oracle_minimum(
        q in prop::collection::vec(-1.0f64..1.0, 3),
        tau_frac in prop::collection::vec(-0.9f64..0.9, 3),
        n in 4usize..64,
        extra in 1usize..64,
        seed in 0u64..1000,
    ) {
        let model = arm();
        let tau: Vec<f64> = model.joints.iter().zip(&tau_frac).map(|(j, f)| j.tau_limit * f).collect();
        let coarse = suf_bruteforce(&model, &[], &q, &[0.0; 3], &tau, &[], n, seed).unwrap();
        let fine = suf_bruteforce(&model, &[], &q, &[0.0; 3], &tau, &[], n + extra, seed).unwrap();
        prop_assert!(fine.rho_min <= coarse.rho_min);
        let again = suf_bruteforce(&model, &[], &q, &[0.0; 3], &tau, &[], n, seed).unwrap();
        prop_assert_eq!(coarse, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reformulation_is_a_lower_bound_on_the_oracle(
        name in scenario_name(),
        tau_frac in prop::collection::vec(-0.8f64..0.8, 11),
        normal_gain in prop::collection::vec(0.6f64..1.4, 4),
        tangential in prop::collection::vec(-0.7f64..0.7, 8),
    ) {
        let k = knot(name, &tau_frac, &normal_gain, &tangential);
        let model = &k.scenario.model;
        let v = vec![0.0; model.nv()];
        let reform = evaluate_suf_at_knot(model, &k.contacts, &k.q, &v, &k.tau, &k.lambda);
        let oracle = suf_bruteforce(model, &k.contacts, &k.q, &v, &k.tau, &k.lambda, 256, 5).unwrap();
        prop_assert!(reform.rho <= oracle.rho_min + 1e-3 * (1.0 + reform.rho), "{} > {}", reform.rho, oracle.rho_min);
    }

    #[test]
    fn tightening_torque_limits_never_raises_the_radius(
        name in scenario_name(),
        tau_frac in prop::collection::vec(-0.4f64..0.4, 11),
        shrink in prop::collection::vec(0.5f64..1.0, 11),
    ) {
        let k = knot(name, &tau_frac, &[1.0; 4], &[0.0; 8]);
        let mut tight = k.scenario.model.clone();
        for (j, s) in tight.joints.iter_mut().zip(&shrink) {
            j.tau_limit *= s;
        }
        let v = vec![0.0; tight.nv()];
        let loose = evaluate_suf_at_knot(&k.scenario.model, &k.contacts, &k.q, &v, &k.tau, &k.lambda);
        let tightened = evaluate_suf_at_knot(&tight, &k.contacts, &k.q, &v, &k.tau, &k.lambda);
        prop_assert!(tightened.rho <= loose.rho * (1.0 + 1e-6) + 1e-6, "{} > {}", tightened.rho, loose.rho);
    }
}
