use nalgebra::{DMatrix, Matrix3, Vector3};

use super::mrp::{mrp_rate_matrix_inverse, mrp_to_rotation, skew};
use crate::model::{Model, PointId};

/// World poses of every body and joint for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub base_position: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
    pub body_rotation: Vec<Matrix3<f64>>,
    pub body_position: Vec<Vector3<f64>>,
    /// World joint axes, indexed by joint.
    pub joint_axis: Vec<Vector3<f64>>,
    /// World position of each joint frame origin.
    pub joint_origin: Vec<Vector3<f64>>,
    psi: Vector3<f64>,
}

impl Kinematics {
    pub fn new(model: &Model, q: &[f64]) -> Self {
        debug_assert_eq!(q.len(), model.nq());
        let (base_position, psi, joints) = if model.floating_base {
            (Vector3::new(q[0], q[1], q[2]), Vector3::new(q[3], q[4], q[5]), &q[6..])
        } else {
            (Vector3::zeros(), Vector3::zeros(), q)
        };
        let base_rotation = mrp_to_rotation(&psi);
        let nb = model.bodies.len();
        let mut body_rotation = Vec::with_capacity(nb);
        let mut body_position = Vec::with_capacity(nb);
        body_rotation.push(base_rotation);
        body_position.push(base_position);
        let mut joint_axis = Vec::with_capacity(model.nj());
        let mut joint_origin = Vec::with_capacity(model.nj());
        for (i, joint) in model.joints.iter().enumerate() {
            let rp = body_rotation[joint.parent_body];
            let pp = body_position[joint.parent_body];
            let frame = rp * joint.origin_rotation;
            let angle = joints[i];
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(joint.axis), angle);
            let origin = pp + rp * joint.origin_xyz;
            joint_axis.push(frame * joint.axis);
            joint_origin.push(origin);
            body_rotation.push(frame * rot.matrix());
            body_position.push(origin);
        }
        Kinematics {
            base_position,
            base_rotation,
            body_rotation,
            body_position,
            joint_axis,
            joint_origin,
            psi,
        }
    }

    pub fn point_position(&self, model: &Model, point: PointId) -> Vector3<f64> {
        let (body, offset) = model.point_site(point);
        self.body_position[body] + self.body_rotation[body] * offset
    }

    /// Velocity-space columns touched by the path from `body` to the root.
    fn path_joints(model: &Model, mut body: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::from_fn(move || {
            let j = model.bodies[body].parent_joint?;
            body = model.joints[j].parent_body;
            Some(j)
        })
    }

    /// Linear Jacobian (3 × n_v) of a world point rigidly attached to `body`.
    /// Base columns follow the mixed twist convention: inertial linear
    /// velocity, base-frame angular velocity.
    pub fn body_point_jacobian(&self, model: &Model, body: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let nb = model.n_base();
        let mut jac = DMatrix::zeros(3, model.nv());
        if model.floating_base {
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            let ang = -skew(&(point - self.base_position)) * self.base_rotation;
            jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&ang);
        }
        for j in Self::path_joints(model, body) {
            let col = self.joint_axis[j].cross(&(point - self.joint_origin[j]));
            jac.fixed_view_mut::<3, 1>(0, nb + j).copy_from(&col);
        }
        jac
    }

    pub fn point_jacobian(&self, model: &Model, point: PointId) -> DMatrix<f64> {
        let (body, _) = model.point_site(point);
        let p = self.point_position(model, point);
        self.body_point_jacobian(model, body, &p)
    }

    /// World angular-velocity Jacobian (3 × n_v) of `body`.
    pub fn angular_jacobian(&self, model: &Model, body: usize) -> DMatrix<f64> {
        let nb = model.n_base();
        let mut jac = DMatrix::zeros(3, model.nv());
        if model.floating_base {
            jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.base_rotation);
        }
        for j in Self::path_joints(model, body) {
            jac.fixed_view_mut::<3, 1>(0, nb + j).copy_from(&self.joint_axis[j]);
        }
        jac
    }

    /// Right-multiplies a velocity Jacobian (columns in v-space) so that it
    /// maps coordinate increments `dq` instead, i.e. returns `J · ∂v/∂q̇`.
    pub fn to_configuration_jacobian(&self, model: &Model, jac: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = jac.clone();
        if model.floating_base {
            let e = mrp_rate_matrix_inverse(&self.psi);
            let ang = jac.columns(3, 3) * e;
            out.columns_mut(3, 3).copy_from(&ang);
        }
        out
    }
}

