//! Modified Rodrigues Parameters.
//!
//! `ψ = q_v / (1 + q_0)` for a Hamiltonian unit quaternion `(q_0, q_v)`. The
//! rotation matrix maps base-frame vectors to the inertial frame.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `R = I + (8 [ψ]×² + 4 (1 − |ψ|²) [ψ]×) / (1 + |ψ|²)²`.
pub fn mrp_to_rotation(psi: &Vector3<f64>) -> Matrix3<f64> {
    let s = psi.norm_squared();
    let k = skew(psi);
    let d = (1.0 + s) * (1.0 + s);
    Matrix3::identity() + (k * k * 8.0 + k * (4.0 * (1.0 - s))) / d
}

/// Inverse of [`mrp_to_rotation`], returning the set with `|ψ| ≤ 1`.
pub fn rotation_to_mrp(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_matrix(rotation);
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    v / (1.0 + w)
}

/// Shadow set `−ψ / |ψ|²`, describing the same attitude.
pub fn shadow(psi: &Vector3<f64>) -> Vector3<f64> {
    -psi / psi.norm_squared()
}

/// Switches to the shadow set whenever `|ψ| > 1`.
pub fn switch_to_short(psi: &Vector3<f64>) -> Vector3<f64> {
    if psi.norm_squared() > 1.0 {
        shadow(psi)
    } else {
        *psi
    }
}

/// Kinematic map `ψ̇ = T(ψ) ω` for a body-frame angular velocity,
/// `T = ¼ ((1 − |ψ|²) I + 2 [ψ]× + 2 ψ ψᵀ)`.
pub fn mrp_rate_matrix(psi: &Vector3<f64>) -> Matrix3<f64> {
    let s = psi.norm_squared();
    (Matrix3::identity() * (1.0 - s) + skew(psi) * 2.0 + psi * psi.transpose() * 2.0) * 0.25
}

/// Inverse of [`mrp_rate_matrix`]: `ω = T(ψ)⁻¹ ψ̇ = 4 Bᵀ ψ̇ / (1 + |ψ|²)²`.
pub fn mrp_rate_matrix_inverse(psi: &Vector3<f64>) -> Matrix3<f64> {
    let s = psi.norm_squared();
    let bt = Matrix3::identity() * (1.0 - s) - skew(psi) * 2.0 + psi * psi.transpose() * 2.0;
    bt * (4.0 / ((1.0 + s) * (1.0 + s)))
}

pub fn mrp_rates(psi: &Vector3<f64>, omega_body: &Vector3<f64>) -> Vector3<f64> {
    mrp_rate_matrix(psi) * omega_body
}

/// Rotation matrix exponential of `[w]×`.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(*w).to_rotation_matrix().into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quaternion_route(psi: &Vector3<f64>) -> Matrix3<f64> {
        let s = psi.norm_squared();
        let q0 = (1.0 - s) / (1.0 + s);
        let qv = psi * (2.0 / (1.0 + s));
        Matrix3::identity() + skew(&qv) * (2.0 * q0) + skew(&qv) * skew(&qv) * 2.0
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(mrp_to_rotation(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn unit_x_is_half_turn() {
        let r = mrp_to_rotation(&Vector3::x());
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        assert!((r - expected).norm() < 1e-14);
        assert!((r - quaternion_route(&Vector3::x())).norm() < 1e-14);
    }

    #[test]
    fn rate_map_at_identity_is_quarter() {
        let rate = mrp_rates(&Vector3::zeros(), &Vector3::z());
        assert!((rate - Vector3::new(0.0, 0.0, 0.25)).norm() < 1e-15);
        assert_eq!(mrp_rates(&Vector3::new(0.2, 0.1, 0.3), &Vector3::zeros()), Vector3::zeros());
    }

    #[test]
    fn shadow_describes_same_rotation() {
        let psi = Vector3::new(0.7, -0.9, 0.4);
        let r1 = mrp_to_rotation(&psi);
        let r2 = mrp_to_rotation(&shadow(&psi));
        assert!((r1 - r2).norm() < 1e-12);
        assert!(switch_to_short(&psi).norm() <= 1.0);
    }

    proptest! {
        #[test]
        fn rotation_is_proper(x in -0.99f64..0.99, y in -0.99f64..0.99, z in -0.99f64..0.99) {
            let psi = Vector3::new(x, y, z) / 1.8;
            let r = mrp_to_rotation(&psi);
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((r - quaternion_route(&psi)).amax() < 1e-12);
            prop_assert!((rotation_to_mrp(&r) - psi).norm() < 1e-10);
        }

        #[test]
        fn rates_match_rotation_derivative(
            x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5,
            wx in -2.0f64..2.0, wy in -2.0f64..2.0, wz in -2.0f64..2.0,
        ) {
            let psi = Vector3::new(x, y, z);
            let omega = Vector3::new(wx, wy, wz);
            let rate = mrp_rates(&psi, &omega);
            let eps = 1e-6;
            let r_dot = (mrp_to_rotation(&(psi + rate * eps)) - mrp_to_rotation(&(psi - rate * eps))) / (2.0 * eps);
            let expected = mrp_to_rotation(&psi) * skew(&omega);
            prop_assert!((r_dot - expected).amax() < 1e-6);
            let back = mrp_rate_matrix_inverse(&psi) * rate;
            prop_assert!((back - omega).norm() < 1e-10);
        }
    }
}
