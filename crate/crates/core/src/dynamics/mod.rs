//! Kinematics and rigid-body dynamics of floating-base trees.
//!
//! Generalized velocities use the mixed twist convention: base linear
//! velocity in the inertial frame, base angular velocity in the base frame,
//! then joint rates.

pub mod kinematics;
pub mod mrp;
mod rigid;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

pub use kinematics::Kinematics;
pub use mrp::{mrp_rate_matrix, mrp_rate_matrix_inverse, mrp_rates, mrp_to_rotation, rotation_to_mrp, shadow, skew, switch_to_short};

use crate::model::{Model, PointId};

/// Condition number above which the mass matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("unknown point: {0}")]
    UnknownPoint(String),
    #[error("degenerate inertia: mass matrix condition estimate {0:.3e}")]
    DegenerateInertia(f64),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ContactJacobians {
    /// Stacked contact point Jacobians, `n_s × n_v`.
    pub support: DMatrix<f64>,
    /// End-effector point Jacobian, `3 × n_v`.
    pub end_effector: DMatrix<f64>,
}

fn check_len(what: &'static str, slice: &[f64], expected: usize) -> Result<(), DynamicsError> {
    if slice.len() == expected {
        Ok(())
    } else {
        Err(DynamicsError::Dimension {
            what,
            expected,
            got: slice.len(),
        })
    }
}

fn check_point(model: &Model, point: PointId) -> Result<(), DynamicsError> {
    model.check_point(point).map_err(|e| DynamicsError::UnknownPoint(e.to_string()))
}

pub fn forward_kinematics(model: &Model, q: &[f64], point: PointId) -> Result<Vector3<f64>, DynamicsError> {
    check_point(model, point)?;
    check_len("q", q, model.nq())?;
    Ok(Kinematics::new(model, q).point_position(model, point))
}

pub fn point_jacobian(model: &Model, q: &[f64], point: PointId) -> Result<DMatrix<f64>, DynamicsError> {
    check_point(model, point)?;
    check_len("q", q, model.nq())?;
    Ok(Kinematics::new(model, q).point_jacobian(model, point))
}

pub fn contact_jacobians_from(model: &Model, kin: &Kinematics) -> ContactJacobians {
    let mut support = DMatrix::zeros(model.ns(), model.nv());
    for i in 0..model.nc() {
        let j = kin.point_jacobian(model, PointId::Contact(i));
        support.rows_mut(3 * i, 3).copy_from(&j);
    }
    ContactJacobians {
        support,
        end_effector: kin.point_jacobian(model, PointId::EndEffector),
    }
}

pub fn contact_jacobians(model: &Model, q: &[f64]) -> ContactJacobians {
    contact_jacobians_from(model, &Kinematics::new(model, q))
}

/// Joint-space mass matrix via the composite rigid-body algorithm.
pub fn mass_matrix(model: &Model, q: &[f64]) -> DMatrix<f64> {
    rigid::crba(model, &Kinematics::new(model, q))
}

pub fn mass_matrix_from(model: &Model, kin: &Kinematics) -> DMatrix<f64> {
    rigid::crba(model, kin)
}

/// Coriolis, centrifugal and gravity terms `h(q, v)`.
pub fn bias_forces(model: &Model, q: &[f64], v: &[f64], gravity: &Vector3<f64>) -> DVector<f64> {
    let zero = vec![0.0; model.nv()];
    rigid::rnea(model, &Kinematics::new(model, q), v, &zero, gravity)
}

/// Generalized force `M(q) v̇ + h(q, v)` by recursive Newton–Euler.
pub fn inverse_dynamics(model: &Model, q: &[f64], v: &[f64], vdot: &[f64], gravity: &Vector3<f64>) -> DVector<f64> {
    rigid::rnea(model, &Kinematics::new(model, q), v, vdot, gravity)
}

pub fn dynamics_terms_from(model: &Model, kin: &Kinematics, v: &[f64], gravity: &Vector3<f64>) -> DynamicsTerms {
    let zero = vec![0.0; model.nv()];
    DynamicsTerms {
        mass: rigid::crba(model, kin),
        bias: rigid::rnea(model, kin, v, &zero, gravity),
    }
}

pub fn dynamics_terms(model: &Model, q: &[f64], v: &[f64], gravity: &Vector3<f64>) -> DynamicsTerms {
    dynamics_terms_from(model, &Kinematics::new(model, q), v, gravity)
}

/// Solves `M x = rhs` by Cholesky, rejecting ill-conditioned mass matrices.
pub fn solve_mass(mass: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    let chol = mass.cholesky().ok_or(DynamicsError::DegenerateInertia(f64::INFINITY))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    let condition = (hi / lo).powi(2);
    if !(condition <= MAX_CONDITION) {
        return Err(DynamicsError::DegenerateInertia(condition));
    }
    Ok(chol.solve(rhs))
}

/// Generalized force applied by joint torques, contact forces and an
/// end-effector force: `Sᵀτ + J_sᵀλ + J_eᵀf`.
pub fn applied_forces(model: &Model, jac: &ContactJacobians, tau: &[f64], lambda: &[f64], f_ext: &Vector3<f64>) -> DVector<f64> {
    let mut gen = jac.support.tr_mul(&DVector::from_column_slice(lambda)) + jac.end_effector.tr_mul(f_ext);
    let nb = model.n_base();
    for (i, t) in tau.iter().enumerate() {
        gen[nb + i] += t;
    }
    gen
}

/// `v̇ = M⁻¹ (Sᵀτ + J_sᵀλ + J_eᵀf − h)`.
pub fn forward_dynamics(
    model: &Model,
    q: &[f64],
    v: &[f64],
    tau: &[f64],
    lambda: &[f64],
    f_ext: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    check_len("q", q, model.nq())?;
    check_len("v", v, model.nv())?;
    check_len("tau", tau, model.nj())?;
    check_len("lambda", lambda, model.ns())?;
    let kin = Kinematics::new(model, q);
    let jac = contact_jacobians_from(model, &kin);
    let terms = dynamics_terms_from(model, &kin, v, gravity);
    let rhs = applied_forces(model, &jac, tau, lambda, f_ext) - terms.bias;
    solve_mass(terms.mass, &rhs)
}

/// Configuration rates `q̇ = (ṙ, T(ψ) ω, q̇_j)`.
pub fn configuration_rates(model: &Model, q: &[f64], v: &[f64]) -> DVector<f64> {
    let mut qdot = DVector::from_column_slice(v);
    if model.floating_base {
        let psi = Vector3::new(q[3], q[4], q[5]);
        let omega = Vector3::new(v[3], v[4], v[5]);
        qdot.fixed_rows_mut::<3>(3).copy_from(&mrp_rates(&psi, &omega));
    }
    qdot
}

/// Continuous-time state derivative with no end-effector force.
pub fn state_derivative(
    model: &Model,
    q: &[f64],
    v: &[f64],
    tau: &[f64],
    lambda: &[f64],
    gravity: &Vector3<f64>,
) -> Result<(DVector<f64>, DVector<f64>), DynamicsError> {
    let vdot = forward_dynamics(model, q, v, tau, lambda, &Vector3::zeros(), gravity)?;
    Ok((configuration_rates(model, q, v), vdot))
}

/// Moves `q` along the constant velocity `v` for `dt`, using the exact
/// rotation exponential for the base. The result keeps `|ψ| ≤ 1`.
pub fn integrate(model: &Model, q: &[f64], v: &[f64], dt: f64) -> DVector<f64> {
    let mut out = DVector::from_column_slice(q);
    let nb = model.n_base();
    for i in 0..model.nj() {
        out[nb + i] += dt * v[nb + i];
    }
    if model.floating_base {
        for i in 0..3 {
            out[i] += dt * v[i];
        }
        let psi = Vector3::new(q[3], q[4], q[5]);
        let omega = Vector3::new(v[3], v[4], v[5]);
        let r = mrp_to_rotation(&psi) * mrp::so3_exp(&(omega * dt));
        let next = rotation_to_mrp(&r);
        out.fixed_rows_mut::<3>(3).copy_from(&next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

    fn single_body() -> Model {
        parse_model(
            r#"{"name": "brick",
                "bodies": [{"name": "b", "parent_joint": null, "mass": 2.0, "com": [0, 0, 0],
                            "inertia": [0.1, 0, 0, 0.2, 0, 0.3]}],
                "contacts": [{"body": "b", "offset": [0.1, 0, 0]}],
                "end_effector": {"body": "b", "offset": [0, 0, 0]}}"#,
        )
        .unwrap()
    }

    fn planar_chain() -> Model {
        parse_model(
            r#"{"name": "chain", "floating_base": false,
                "bodies": [
                  {"name": "ground", "parent_joint": null, "mass": 1.0, "com": [0, 0, 0], "inertia": [1, 0, 0, 1, 0, 1]},
                  {"name": "l1", "parent_joint": "j1", "mass": 1.0, "com": [0.25, 0, 0], "inertia": [0.01, 0, 0, 0.02, 0, 0.02]},
                  {"name": "l2", "parent_joint": "j2", "mass": 0.5, "com": [0.2, 0, 0], "inertia": [0.01, 0, 0, 0.01, 0, 0.01]}],
                "joints": [
                  {"name": "j1", "parent_body": "ground", "child_body": "l1", "axis": [0, 0, 1], "origin_xyz": [0, 0, 0],
                   "origin_rpy": [0, 0, 0], "q_limits": [-3, 3], "v_limit": 5, "tau_limit": 10},
                  {"name": "j2", "parent_body": "l1", "child_body": "l2", "axis": [0, 0, 1], "origin_xyz": [0.5, 0, 0],
                   "origin_rpy": [0, 0, 0], "q_limits": [-3, 3], "v_limit": 5, "tau_limit": 10}],
                "end_effector": {"body": "l2", "offset": [0.4, 0, 0]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_body_point_positions() {
        let m = single_body();
        assert_eq!((m.nj(), m.nv(), m.nc()), (0, 6, 1));
        let mut q = vec![0.0; 6];
        let p = forward_kinematics(&m, &q, PointId::Contact(0)).unwrap();
        assert!((p - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        q[..3].copy_from_slice(&[1.0, 2.0, 3.0]);
        let p = forward_kinematics(&m, &q, PointId::Contact(0)).unwrap();
        assert!((p - Vector3::new(1.1, 2.0, 3.0)).norm() < 1e-15);
        assert!(forward_kinematics(&m, &q, PointId::Contact(3)).is_err());
    }

    #[test]
    fn planar_chain_matches_trigonometry() {
        let m = planar_chain();
        let (a, b) = (0.7, -1.2);
        let p = forward_kinematics(&m, &[a, b], PointId::EndEffector).unwrap();
        let expected = Vector3::new(0.5 * a.cos() + 0.4 * (a + b).cos(), 0.5 * a.sin() + 0.4 * (a + b).sin(), 0.0);
        assert!((p - expected).norm() < 1e-14);
    }

    #[test]
    fn base_origin_jacobian_blocks() {
        let m = single_body();
        let j = point_jacobian(&m, &[0.0; 6], PointId::EndEffector).unwrap();
        assert!((j.columns(0, 3) - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
        assert!(j.columns(3, 3).norm() < 1e-15);
    }

    #[test]
    fn single_body_mass_and_gravity() {
        let m = single_body();
        let q = [0.3, -0.2, 1.0, 0.1, 0.2, -0.3];
        let mass = mass_matrix(&m, &q);
        assert!((mass.view((0, 0), (3, 3)) - DMatrix::<f64>::identity(3, 3) * 2.0).norm() < 1e-12);
        let h = bias_forces(&m, &q, &[0.0; 6], &G);
        let expected = [0.0, 0.0, 2.0 * 9.81, 0.0, 0.0, 0.0];
        for i in 0..6 {
            assert!((h[i] - expected[i]).abs() < 1e-12, "{h}");
        }
        let h0 = bias_forces(&m, &q, &[0.0; 6], &Vector3::zeros());
        assert!(h0.norm() == 0.0);
    }

    #[test]
    fn free_body_falls() {
        let m = single_body();
        let q = [0.0, 0.0, 1.0, 0.3, -0.1, 0.2];
        let a = forward_dynamics(&m, &q, &[0.0; 6], &[], &[0.0; 3], &Vector3::zeros(), &G).unwrap();
        let expected = [0.0, 0.0, -9.81, 0.0, 0.0, 0.0];
        for i in 0..6 {
            assert!((a[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spinning_body_has_gyroscopic_bias() {
        let m = single_body();
        let v = [0.0, 0.0, 0.0, 1.0, 2.0, 0.5];
        let h = bias_forces(&m, &[0.0; 6], &v, &Vector3::zeros());
        let w = Vector3::new(1.0, 2.0, 0.5);
        let i = nalgebra::Matrix3::from_diagonal(&Vector3::new(0.1, 0.2, 0.3));
        let expected = w.cross(&(i * w));
        for k in 0..3 {
            assert!(h[k].abs() < 1e-12);
            assert!((h[3 + k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_mass_is_rejected() {
        let mut mass = DMatrix::<f64>::identity(3, 3);
        mass[(2, 2)] = 1e-14;
        let err = solve_mass(mass, &DVector::from_element(3, 1.0)).unwrap_err();
        assert!(matches!(err, DynamicsError::DegenerateInertia(_)));
    }

    #[test]
    fn rates_at_rest_vanish() {
        let m = single_body();
        let q = [0.1, 0.2, 0.3, 0.2, -0.4, 0.1];
        let (qdot, _) = state_derivative(&m, &q, &[0.0; 6], &[], &[0.0; 3], &G).unwrap();
        assert_eq!(qdot.norm(), 0.0);
    }

    #[test]
    fn integrate_keeps_short_mrp() {
        let m = single_body();
        let q = [0.0, 0.0, 0.0, 0.95, 0.0, 0.0];
        let next = integrate(&m, &q, &[0.0, 0.0, 0.0, 3.0, 0.0, 0.0], 0.1);
        let r_next = mrp_to_rotation(&Vector3::new(next[3], next[4], next[5]));
        let r_expected = mrp_to_rotation(&Vector3::new(0.95, 0.0, 0.0)) * mrp::so3_exp(&Vector3::new(0.3, 0.0, 0.0));
        assert!((r_next - r_expected).norm() < 1e-12);
        assert!(Vector3::new(next[3], next[4], next[5]).norm() <= 1.0);
    }
}
