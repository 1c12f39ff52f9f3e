//! Direct transcription of the pick-and-place planning problem into a
//! sparse NLP with explicit Euler defects.

mod audit;
mod blocks;
mod trajectory;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

pub use audit::{audit_trajectory, ConstraintAudit};
pub use blocks::{cone_rows, DefectBlock, FeetBlock, GripperBlock};
pub(crate) use blocks::knot_acceleration;
pub use trajectory::{Trajectory, TrajectoryError};

use crate::dynamics::{configuration_rates, contact_jacobians_from, dynamics_terms_from, Kinematics};
use crate::model::{ContactPoint, Model, Objective, PointId, Scenario, Waypoint};
use crate::nlp::{BlockKind, LinearBlock, NlpProblem, QuadraticObjective, SolveStatus};

/// Lower bound on every normal contact force, N.
pub const NORMAL_FLOOR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptionError {
    #[error("target axis has zero norm")]
    ZeroAxis,
    #[error("model must have a floating base")]
    FixedBase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshGrid {
    /// Knot count `M`.
    pub knots: usize,
    pub step: f64,
}

impl MeshGrid {
    pub fn new(duration: f64, knots: usize) -> Self {
        assert!(knots >= 2 && duration > 0.0);
        MeshGrid {
            knots,
            step: duration / (knots - 1) as f64,
        }
    }

    pub fn intervals(&self) -> usize {
        self.knots - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.knots).map(|k| self.time(k)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.step * self.intervals() as f64
    }
}

/// Offsets of the nominal decision variables. Knots and intervals are
/// zero-based here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub nq: usize,
    pub nv: usize,
    pub nj: usize,
    pub ns: usize,
    pub knots: usize,
}

impl DecisionLayout {
    pub fn new(model: &Model, knots: usize) -> Self {
        DecisionLayout {
            nq: model.nq(),
            nv: model.nv(),
            nj: model.nj(),
            ns: model.ns(),
            knots,
        }
    }

    pub fn intervals(&self) -> usize {
        self.knots - 1
    }

    pub fn q(&self, k: usize) -> Range<usize> {
        let s = k * self.nq;
        s..s + self.nq
    }

    pub fn v(&self, k: usize) -> Range<usize> {
        let s = self.knots * self.nq + k * self.nv;
        s..s + self.nv
    }

    pub fn tau(&self, k: usize) -> Range<usize> {
        let s = self.knots * (self.nq + self.nv) + k * self.nj;
        s..s + self.nj
    }

    pub fn lambda(&self, k: usize) -> Range<usize> {
        let s = self.knots * (self.nq + self.nv) + self.intervals() * self.nj + k * self.ns;
        s..s + self.ns
    }

    pub fn len(&self) -> usize {
        self.knots * (self.nq + self.nv) + self.intervals() * (self.nj + self.ns)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for k in 0..self.knots {
            x[self.q(k)].copy_from_slice(&traj.q[k]);
            x[self.v(k)].copy_from_slice(&traj.v[k]);
        }
        for k in 0..self.intervals() {
            x[self.tau(k)].copy_from_slice(&traj.tau[k]);
            x[self.lambda(k)].copy_from_slice(&traj.lambda[k]);
        }
        x
    }

    /// Builds a trajectory from the nominal part of `x`.
    pub fn unpack(&self, x: &[f64], scenario: &Scenario, status: SolveStatus) -> Trajectory {
        let mesh = MeshGrid::new(scenario.duration, self.knots);
        let rows = |r: fn(&Self, usize) -> Range<usize>, count: usize| -> Vec<Vec<f64>> {
            (0..count).map(|k| x[r(self, k)].to_vec()).collect()
        };
        Trajectory {
            objective: scenario.objective,
            status: status.as_str().to_string(),
            mesh_points: self.knots,
            step_s: mesh.step,
            times_s: mesh.times(),
            q: rows(Self::q, self.knots),
            v: rows(Self::v, self.knots),
            tau: rows(Self::tau, self.intervals()),
            lambda: rows(Self::lambda, self.intervals()),
            rho: None,
            k_lambda: None,
            model: serde_json::from_str(&scenario.model.to_json()).expect("model json"),
            scenario: serde_json::from_str(&scenario.to_json()).expect("scenario json"),
        }
    }
}

/// A built nominal problem.
pub struct Transcription {
    pub problem: NlpProblem,
    pub layout: DecisionLayout,
    pub mesh: MeshGrid,
    pub warnings: Vec<String>,
}

/// Four friction-pyramid rows and the normal-floor row of one contact
/// (feasible when every entry is ≤ 0).
pub fn friction_residuals(lambda: &Vector3<f64>, contact: &ContactPoint) -> [f64; 5] {
    let r = cone_rows(contact) * lambda;
    [r[0], r[1], r[2], r[3], r[4] + NORMAL_FLOOR]
}

/// Two unit vectors spanning the plane orthogonal to `axis`.
pub fn axis_span(axis: &Vector3<f64>) -> Result<[Vector3<f64>; 2], TranscriptionError> {
    if !(axis.norm() > 0.0) {
        return Err(TranscriptionError::ZeroAxis);
    }
    let (t1, t2) = ContactPoint::frame_from_normal(axis);
    Ok([t1, t2])
}

/// Gripper position error and the approach-axis projections onto the plane
/// orthogonal to the target axis.
pub fn gripper_residuals(model: &Model, q: &[f64], waypoint: &Waypoint) -> Result<[f64; 5], TranscriptionError> {
    let block = gripper_block(&Arc::new(model.clone()), "check", waypoint, Vec::new())?;
    let mut out = [0.0; 5];
    crate::nlp::ConstraintBlock::eval(&block, q, &mut out);
    Ok(out)
}

fn gripper_block(
    model: &Arc<Model>,
    label: &'static str,
    waypoint: &Waypoint,
    vars: Vec<usize>,
) -> Result<GripperBlock, TranscriptionError> {
    let axis = Vector3::from(waypoint.axis);
    Ok(GripperBlock {
        model: model.clone(),
        label,
        target: Vector3::from(waypoint.position),
        span: axis_span(&axis)?,
        vars,
    })
}

/// Builds the nominal problem for the scenario's objective; the robust
/// objective is added on top of this by the robustness module, so `G3`
/// yields the same problem as `G1` here.
pub fn build_problem(scenario: &Scenario) -> Result<Transcription, TranscriptionError> {
    let model = Arc::new(scenario.model.clone());
    if !model.floating_base {
        return Err(TranscriptionError::FixedBase);
    }
    let mesh = MeshGrid::new(scenario.duration, scenario.mesh_points);
    let layout = DecisionLayout::new(&model, mesh.knots);
    let (lower, upper) = variable_bounds(&model, &layout);
    let mut problem = NlpProblem::new(lower, upper);
    let contacts = scenario.contacts();
    let anchors: Vec<Vector3<f64>> = contacts.iter().map(|c| c.anchor).collect();

    for k in 0..mesh.intervals() {
        let vars: Vec<usize> = layout
            .q(k)
            .chain(layout.v(k))
            .chain(layout.tau(k))
            .chain(layout.lambda(k))
            .chain(layout.q(k + 1))
            .chain(layout.v(k + 1))
            .collect();
        problem.add(DefectBlock {
            model: model.clone(),
            gravity: scenario.gravity,
            h: mesh.step,
            interval: k,
            vars,
        });
    }

    let (cone, floor) = stacked_cone(&contacts);
    for k in 0..mesh.intervals() {
        problem.add(LinearBlock {
            name: format!("friction[{k}]"),
            kind: BlockKind::Inequality,
            vars: layout.lambda(k).collect(),
            a: cone.clone(),
            b: floor.clone(),
        });
    }

    // with v₁ = 0 the first defect gives q₂ = q₁, so the second knot's
    // contact rows would only repeat the first knot's
    for k in (0..mesh.knots).filter(|&k| k != 1) {
        problem.add(FeetBlock {
            model: model.clone(),
            anchors: anchors.clone(),
            knot: k,
            vars: layout.q(k).collect(),
        });
    }

    problem.add(gripper_block(&model, "pick", &scenario.task.pick, layout.q(0).collect())?);
    problem.add(gripper_block(
        &model,
        "place",
        &scenario.task.place,
        layout.q(mesh.knots - 1).collect(),
    )?);

    if scenario.objective == Objective::G2 {
        for k in 0..mesh.intervals() {
            problem.add(QuadraticObjective {
                name: format!("torque[{k}]"),
                vars: layout.tau(k).collect(),
                weights: vec![1.0; layout.nj],
                linear: vec![0.0; layout.nj],
            });
        }
    }

    let warnings = reach_warnings(&model, scenario);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Transcription {
        problem,
        layout,
        mesh,
        warnings,
    })
}

/// Stacked friction rows `A λ − b ≤ 0` for all contacts, with the normal
/// floor in `b`.
pub fn stacked_cone(contacts: &[ContactPoint]) -> (DMatrix<f64>, DVector<f64>) {
    let nc = contacts.len();
    let mut a = DMatrix::zeros(5 * nc, 3 * nc);
    let mut b = DVector::zeros(5 * nc);
    for (i, c) in contacts.iter().enumerate() {
        a.view_mut((5 * i, 3 * i), (5, 3)).copy_from(&cone_rows(c));
        b[5 * i + 4] = -NORMAL_FLOOR;
    }
    (a, b)
}

fn variable_bounds(model: &Model, layout: &DecisionLayout) -> (Vec<f64>, Vec<f64>) {
    let n = layout.len();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let nb = model.n_base();
    for k in 0..layout.knots {
        let q = layout.q(k).start;
        let v = layout.v(k).start;
        let rest = k == 0 || k == layout.knots - 1;
        for (i, joint) in model.joints.iter().enumerate() {
            lower[q + nb + i] = joint.q_limits.0;
            upper[q + nb + i] = joint.q_limits.1;
            lower[v + nb + i] = -joint.v_limit;
            upper[v + nb + i] = joint.v_limit;
        }
        if rest {
            for i in 0..layout.nv {
                lower[v + i] = 0.0;
                upper[v + i] = 0.0;
            }
        }
    }
    for k in 0..layout.intervals() {
        let t = layout.tau(k).start;
        for (i, joint) in model.joints.iter().enumerate() {
            lower[t + i] = -joint.tau_limit;
            upper[t + i] = joint.tau_limit;
        }
    }
    (lower, upper)
}

/// Warns about waypoints farther from the arm mount than the arm can reach
/// in the standing pose.
fn reach_warnings(model: &Model, scenario: &Scenario) -> Vec<String> {
    let q = standing_pose(model, &scenario.contacts());
    let kin = Kinematics::new(model, q.as_slice());
    let ee = &model.end_effector;
    let mut chain = Vec::new();
    let mut body = ee.body;
    while let Some(j) = model.bodies[body].parent_joint {
        chain.push(j);
        body = model.joints[j].parent_body;
    }
    let Some(&mount) = chain.last() else {
        return Vec::new();
    };
    let reach: f64 = chain[..chain.len() - 1].iter().map(|&j| model.joints[j].origin_xyz.norm()).sum::<f64>() + ee.offset.norm();
    let center = kin.joint_origin[mount];
    [("pick", &scenario.task.pick), ("place", &scenario.task.place)]
        .into_iter()
        .filter(|(_, w)| (Vector3::from(w.position) - center).amax() > reach)
        .map(|(label, w)| format!("{label} target {:?} lies outside the arm workspace box", w.position))
        .collect()
}

/// Standing configuration with every contact point on its anchor, found by
/// damped Gauss–Newton from the nominal joint angles.
pub fn standing_pose(model: &Model, contacts: &[ContactPoint]) -> DVector<f64> {
    let mut q = DVector::zeros(model.nq());
    let nb = model.n_base();
    q.rows_mut(nb, model.nj()).copy_from_slice(&model.nominal_joints());
    if !model.floating_base || contacts.is_empty() {
        return q;
    }
    let kin = Kinematics::new(model, q.as_slice());
    let n = contacts.len() as f64;
    let mut offset = Vector3::zeros();
    let mut centroid = Vector3::zeros();
    for (i, c) in contacts.iter().enumerate() {
        offset += kin.point_position(model, PointId::Contact(i)) / n;
        centroid += c.anchor / n;
    }
    q.fixed_rows_mut::<3>(0).copy_from(&(centroid - offset));

    for _ in 0..100 {
        let kin = Kinematics::new(model, q.as_slice());
        let mut r = DVector::zeros(3 * contacts.len());
        let mut jac = DMatrix::zeros(3 * contacts.len(), model.nq());
        for (i, c) in contacts.iter().enumerate() {
            let p = kin.point_position(model, PointId::Contact(i));
            r.fixed_rows_mut::<3>(3 * i).copy_from(&(p - c.anchor));
            let j = kin.point_jacobian(model, PointId::Contact(i));
            jac.rows_mut(3 * i, 3).copy_from(&kin.to_configuration_jacobian(model, &j));
        }
        if r.amax() < 1e-13 {
            break;
        }
        let gram = &jac * jac.transpose() + DMatrix::identity(r.len(), r.len()) * 1e-10;
        let Some(chol) = gram.cholesky() else { break };
        let dq = -jac.transpose() * chol.solve(&r);
        q += dq;
        for (i, joint) in model.joints.iter().enumerate() {
            q[nb + i] = q[nb + i].clamp(joint.q_limits.0, joint.q_limits.1);
        }
    }
    q
}

/// Constant standing seed: zero velocity, equal normal force shares and
/// joint torques from static gravity compensation, clamped to the limits.
pub fn default_seed(scenario: &Scenario) -> Trajectory {
    let model = &scenario.model;
    let layout = DecisionLayout::new(model, scenario.mesh_points);
    let contacts = scenario.contacts();
    let q = standing_pose(model, &contacts);
    let v = DVector::zeros(model.nv());
    let weight = model.total_mass() * scenario.gravity.norm();
    let mut lambda = DVector::zeros(model.ns());
    for (i, c) in contacts.iter().enumerate() {
        let share = (weight / contacts.len() as f64).max(2.0 * NORMAL_FLOOR);
        lambda.fixed_rows_mut::<3>(3 * i).copy_from(&(c.normal * share));
    }
    let kin = Kinematics::new(model, q.as_slice());
    let bias = dynamics_terms_from(model, &kin, v.as_slice(), &scenario.gravity).bias;
    let support = contact_jacobians_from(model, &kin).support;
    let residual = bias - support.tr_mul(&lambda);
    let nb = model.n_base();
    let tau: Vec<f64> = model
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| residual[nb + i].clamp(-j.tau_limit, j.tau_limit))
        .collect();

    let mut x = vec![0.0; layout.len()];
    for k in 0..layout.knots {
        x[layout.q(k)].copy_from_slice(q.as_slice());
    }
    for k in 0..layout.intervals() {
        x[layout.tau(k)].copy_from_slice(&tau);
        x[layout.lambda(k)].copy_from_slice(lambda.as_slice());
    }
    layout.unpack(&x, scenario, SolveStatus::MaxIter).with_status("seed")
}

impl Trajectory {
    pub(crate) fn with_status(mut self, status: &str) -> Self {
        self.status = status.to_string();
        self
    }
}

/// Largest deviation between stored knots and a knot-by-knot explicit Euler
/// step from the previous knot with the stored inputs.
pub fn euler_residual(scenario: &Scenario, traj: &Trajectory) -> f64 {
    interval_euler_residuals(scenario, traj).into_iter().fold(0.0, f64::max)
}

/// Per-interval version of [`euler_residual`]; infinite where the mass
/// matrix cannot be factored.
pub fn interval_euler_residuals(scenario: &Scenario, traj: &Trajectory) -> Vec<f64> {
    let model = &scenario.model;
    let h = traj.step_s;
    (0..traj.intervals())
        .map(|k| {
            let (q, v) = (&traj.q[k], &traj.v[k]);
            let qdot = configuration_rates(model, q, v);
            let Some(a) = knot_acceleration(model, &scenario.gravity, q, v, &traj.tau[k], &traj.lambda[k]) else {
                return f64::INFINITY;
            };
            let mut worst = 0.0f64;
            for i in 0..model.nq() {
                worst = worst.max((q[i] + h * qdot[i] - traj.q[k + 1][i]).abs());
            }
            for i in 0..model.nv() {
                worst = worst.max((v[i] + h * a[i] - traj.v[k + 1][i]).abs());
            }
            worst
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContactPoint;

    fn contact(mu: f64) -> ContactPoint {
        let normal = Vector3::new(0.0, 0.0, 1.0);
        let (tangent, bitangent) = ContactPoint::frame_from_normal(&normal);
        ContactPoint {
            body: 0,
            offset: Vector3::zeros(),
            anchor: Vector3::zeros(),
            normal,
            tangent,
            bitangent,
            mu,
        }
    }

    #[test]
    fn friction_rows_for_pure_normal_force() {
        let c = contact(0.5);
        let r = friction_residuals(&(c.normal * 10.0), &c);
        for row in &r[..4] {
            assert!((row + 10.0 * 0.5 / 2f64.sqrt()).abs() < 1e-12);
        }
        assert!((r[4] - (NORMAL_FLOOR - 10.0)).abs() < 1e-12);
    }

    #[test]
    fn friction_row_on_boundary_is_zero() {
        let c = contact(0.8);
        let lambda = c.normal * 4.0 + c.tangent * (4.0 * 0.8 / 2f64.sqrt());
        let r = friction_residuals(&lambda, &c);
        assert!(r[0].abs() < 1e-12);
        assert!(r[1] < 0.0);
    }

    #[test]
    fn pulling_force_violates_normal_row() {
        let c = contact(0.7);
        let r = friction_residuals(&(-c.normal), &c);
        assert!((r[4] - (1.0 + NORMAL_FLOOR)).abs() < 1e-12);
    }

    #[test]
    fn layout_is_contiguous() {
        let layout = DecisionLayout {
            nq: 5,
            nv: 5,
            nj: 2,
            ns: 3,
            knots: 4,
        };
        let mut seen = vec![0; layout.len()];
        for k in 0..4 {
            layout.q(k).chain(layout.v(k)).for_each(|i| seen[i] += 1);
        }
        for k in 0..3 {
            layout.tau(k).chain(layout.lambda(k)).for_each(|i| seen[i] += 1);
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(layout.len(), 4 * 10 + 3 * 5);
    }

    #[test]
    fn zero_axis_is_rejected() {
        assert_eq!(axis_span(&Vector3::zeros()), Err(TranscriptionError::ZeroAxis));
    }
}
