//! Re-evaluation of a stored trajectory against every constraint family,
//! computed directly from kinematics and dynamics rather than through the
//! NLP blocks.

use nalgebra::Vector3;
use serde::Serialize;

use super::{euler_residual, friction_residuals, gripper_residuals, Trajectory};
use crate::dynamics::Kinematics;
use crate::model::{PointId, Scenario};

/// Largest violation per constraint family. Every entry is ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ConstraintAudit {
    /// Knot-by-knot explicit Euler mismatch.
    pub defect: f64,
    /// Contact point distance from its anchor, in metres.
    pub feet: f64,
    pub friction: f64,
    pub gripper: f64,
    /// Joint position, velocity and torque limits plus the rest conditions.
    pub bounds: f64,
}

impl ConstraintAudit {
    pub fn worst(&self) -> f64 {
        [self.defect, self.feet, self.friction, self.gripper, self.bounds]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

pub fn audit_trajectory(scenario: &Scenario, traj: &Trajectory) -> ConstraintAudit {
    let model = &scenario.model;
    let contacts = scenario.contacts();
    let nb = model.n_base();
    let mut audit = ConstraintAudit {
        defect: euler_residual(scenario, traj),
        ..Default::default()
    };

    for (k, q) in traj.q.iter().enumerate() {
        let kin = Kinematics::new(model, q);
        for (i, c) in contacts.iter().enumerate() {
            let p = kin.point_position(model, PointId::Contact(i));
            audit.feet = audit.feet.max((p - c.anchor).norm());
        }
        for (i, joint) in model.joints.iter().enumerate() {
            let (lo, hi) = joint.q_limits;
            let qi = q[nb + i];
            audit.bounds = audit.bounds.max(lo - qi).max(qi - hi);
            audit.bounds = audit.bounds.max(traj.v[k][nb + i].abs() - joint.v_limit);
        }
    }
    for v in [traj.v.first(), traj.v.last()].into_iter().flatten() {
        audit.bounds = audit.bounds.max(v.iter().fold(0.0, |a, x| a.max(x.abs())));
    }
    for tau in &traj.tau {
        for (t, joint) in tau.iter().zip(&model.joints) {
            audit.bounds = audit.bounds.max(t.abs() - joint.tau_limit);
        }
    }
    for lambda in &traj.lambda {
        for (i, c) in contacts.iter().enumerate() {
            let f = Vector3::from_column_slice(&lambda[3 * i..3 * i + 3]);
            audit.friction = audit.friction.max(friction_residuals(&f, c).into_iter().fold(0.0, f64::max));
        }
    }
    let ends = [(traj.q.first(), &scenario.task.pick), (traj.q.last(), &scenario.task.place)];
    for (q, waypoint) in ends {
        let Some(q) = q else { continue };
        audit.gripper = match gripper_residuals(model, q, waypoint) {
            Ok(r) => audit.gripper.max(r.iter().fold(0.0, |a, x| a.max(x.abs()))),
            Err(_) => f64::INFINITY,
        };
    }
    audit
}
