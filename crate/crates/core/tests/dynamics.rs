mod common;

use nalgebra::{DMatrix, DVector, Vector3};
use robusttraj::dynamics::{
    applied_forces, bias_forces, configuration_rates, contact_jacobians, forward_dynamics, forward_kinematics, integrate,
    inverse_dynamics, mass_matrix, point_jacobian, state_derivative, Kinematics,
};
use robusttraj::model::{Model, PointId};

use common::{max_abs, random_q, random_vector, rng};

const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

fn points(model: &Model) -> Vec<PointId> {
    let mut p: Vec<_> = (0..model.nc()).map(PointId::Contact).collect();
    p.push(PointId::EndEffector);
    p
}

fn energy(model: &Model, q: &[f64], v: &[f64]) -> f64 {
    let mass = mass_matrix(model, q);
    let v = DVector::from_column_slice(v);
    let kinetic = 0.5 * v.dot(&(&mass * &v));
    let kin = Kinematics::new(model, q);
    let potential: f64 = model
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let c = kin.body_position[b] + kin.body_rotation[b] * body.inertia.com;
            -body.inertia.mass * G.dot(&c)
        })
        .sum();
    kinetic + potential
}

#[test]
fn point_jacobians_match_finite_differences() {
    for name in ["mini", "anymal_jaco_like", "fixed_arm"] {
        let model = common::model(name);
        let mut r = rng(11);
        for _ in 0..10 {
            let q = random_q(&model, &mut r);
            let v = random_vector(model.nv(), 1.0, &mut r);
            for p in points(&model) {
                let j = point_jacobian(&model, &q, p).unwrap();
                let eps = 1e-6;
                let plus = forward_kinematics(&model, integrate(&model, &q, &v, eps).as_slice(), p).unwrap();
                let minus = forward_kinematics(&model, integrate(&model, &q, &v, -eps).as_slice(), p).unwrap();
                let fd = (plus - minus) / (2.0 * eps);
                let an = &j * DVector::from_column_slice(&v);
                let err = (fd - an.fixed_rows::<3>(0)).norm() / (1.0 + an.norm());
                assert!(err < 1e-6, "{name} {p:?}: {err}");
            }
        }
    }
}

#[test]
fn configuration_rates_match_integration() {
    let model = common::model("mini");
    let mut r = rng(5);
    for _ in 0..10 {
        let q = random_q(&model, &mut r);
        let v = random_vector(model.nv(), 1.0, &mut r);
        let eps = 1e-6;
        let fd = (integrate(&model, &q, &v, eps) - integrate(&model, &q, &v, -eps)) / (2.0 * eps);
        let qdot = configuration_rates(&model, &q, &v);
        assert!((fd - &qdot).amax() < 1e-7);
        assert_eq!(qdot.rows(6, model.nj()), DVector::from_column_slice(&v[6..]));
    }
}

#[test]
fn mass_matrix_symmetric_positive_definite() {
    for name in ["mini", "anymal_jaco_like", "fixed_arm"] {
        let model = common::model(name);
        let mut r = rng(3);
        for _ in 0..20 {
            let q = random_q(&model, &mut r);
            let m = mass_matrix(&model, &q);
            assert!((&m - m.transpose()).amax() <= 1e-10 * m.amax());
            let eig = m.clone().symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "{name}: {eig}");
        }
    }
}

#[test]
fn mass_matrix_columns_from_unit_accelerations() {
    for name in ["mini", "anymal_jaco_like"] {
        let model = common::model(name);
        let mut r = rng(8);
        let q = random_q(&model, &mut r);
        let v = random_vector(model.nv(), 1.0, &mut r);
        let m = mass_matrix(&model, &q);
        let h = bias_forces(&model, &q, &v, &G);
        for j in 0..model.nv() {
            let mut e = vec![0.0; model.nv()];
            e[j] = 1.0;
            let col = inverse_dynamics(&model, &q, &v, &e, &G) - &h;
            assert!((col - m.column(j)).amax() < 1e-9 * (1.0 + m.amax()));
        }
    }
}

#[test]
fn power_balance_without_external_forces() {
    let model = common::model("mini");
    let mut r = rng(21);
    for _ in 0..5 {
        let q = random_q(&model, &mut r);
        let v = random_vector(model.nv(), 0.5, &mut r);
        let tau = random_vector(model.nj(), 5.0, &mut r);
        let lambda = random_vector(model.ns(), 20.0, &mut r);
        let vdot = forward_dynamics(&model, &q, &v, &tau, &lambda, &Vector3::zeros(), &G).unwrap();
        let jac = contact_jacobians(&model, &q);
        let gen = applied_forces(&model, &jac, &tau, &lambda, &Vector3::zeros());
        let power = DVector::from_column_slice(&v).dot(&gen);

        let eps = 1e-5;
        let step = |s: f64| {
            let qs = integrate(&model, &q, &v, s);
            let vs: Vec<f64> = v.iter().zip(vdot.iter()).map(|(a, b)| a + s * b).collect();
            energy(&model, qs.as_slice(), &vs)
        };
        let rate = (step(eps) - step(-eps)) / (2.0 * eps);
        assert!((rate - power).abs() <= 1e-5 * (1.0 + power.abs()), "{rate} vs {power}");
    }
}

#[test]
fn static_stance_has_zero_acceleration() {
    let model = common::model("mini");
    let mut q = vec![0.0; model.nq()];
    q[2] = 0.4;
    q[6..].copy_from_slice(&model.nominal_joints());
    let v = vec![0.0; model.nv()];
    let h = bias_forces(&model, &q, &v, &G);
    let jac = contact_jacobians(&model, &q);
    // base rows: J_s,baseᵀ λ = h_base, least-norm solution
    let base_t: DMatrix<f64> = jac.support.columns(0, 6).transpose();
    let lambda = base_t.clone().svd(true, true).solve(&h.rows(0, 6).into_owned(), 1e-12).unwrap();
    let tau_full = &h - jac.support.tr_mul(&lambda);
    let tau: Vec<f64> = tau_full.rows(6, model.nj()).iter().copied().collect();
    let vdot = forward_dynamics(&model, &q, &v, &tau, lambda.as_slice(), &Vector3::zeros(), &G).unwrap();
    assert!(vdot.amax() <= 1e-8, "{vdot}");
}

#[test]
fn inverse_of_forward_dynamics_roundtrip() {
    for name in ["mini", "anymal_jaco_like"] {
        let model = common::model(name);
        let mut r = rng(17);
        for _ in 0..10 {
            let q = random_q(&model, &mut r);
            let v = random_vector(model.nv(), 1.0, &mut r);
            let tau = random_vector(model.nj(), 10.0, &mut r);
            let lambda = random_vector(model.ns(), 30.0, &mut r);
            let f = Vector3::new(1.0, -2.0, 3.0);
            let vdot = forward_dynamics(&model, &q, &v, &tau, &lambda, &f, &G).unwrap();
            let back = inverse_dynamics(&model, &q, &v, vdot.as_slice(), &G);
            let gen = applied_forces(&model, &contact_jacobians(&model, &q), &tau, &lambda, &f);
            assert!((back - &gen).amax() <= 1e-8 * (1.0 + gen.amax()));
        }
    }
}

#[test]
fn state_derivative_joint_block_is_velocity() {
    let model = common::model("mini");
    let mut r = rng(2);
    let q = random_q(&model, &mut r);
    let v = random_vector(model.nv(), 1.0, &mut r);
    let tau = vec![0.0; model.nj()];
    let lambda = vec![0.0; model.ns()];
    let (qdot, vdot) = state_derivative(&model, &q, &v, &tau, &lambda, &G).unwrap();
    assert_eq!(qdot.rows(6, model.nj()), DVector::from_column_slice(&v[6..]));
    assert_eq!(&qdot.rows(0, 3).into_owned(), &DVector::from_column_slice(&v[..3]));
    let again = state_derivative(&model, &q, &v, &tau, &lambda, &G).unwrap();
    assert_eq!(vdot, again.1);
    assert!(max_abs(vdot.iter().copied()).is_finite());
}
