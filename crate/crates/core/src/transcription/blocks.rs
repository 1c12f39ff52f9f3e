//! Constraint blocks of the nominal transcription.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::{configuration_rates, contact_jacobians_from, dynamics_terms_from, mass_matrix_from, Kinematics};
use crate::model::{ContactPoint, Model, PointId};
use crate::nlp::{BlockKind, ConstraintBlock};

/// Step of the second-order differences used for the defect Hessian.
const HESSIAN_STEP: f64 = 2e-5;
const JACOBIAN_STEP: f64 = 6e-6;

/// Generalized acceleration at one knot, `None` when the mass matrix cannot
/// be factorized.
pub(crate) fn knot_acceleration(
    model: &Model,
    gravity: &Vector3<f64>,
    q: &[f64],
    v: &[f64],
    tau: &[f64],
    lambda: &[f64],
) -> Option<DVector<f64>> {
    let kin = Kinematics::new(model, q);
    let jac = contact_jacobians_from(model, &kin);
    let terms = dynamics_terms_from(model, &kin, v, gravity);
    let mut rhs = jac.support.tr_mul(&DVector::from_column_slice(lambda)) - terms.bias;
    let nb = model.n_base();
    for (i, t) in tau.iter().enumerate() {
        rhs[nb + i] += t;
    }
    terms.mass.cholesky().map(|c| c.solve(&rhs))
}

/// Explicit Euler defect of one interval over the local variables
/// `(q_k, v_k, τ_k, λ_k, q_{k+1}, v_{k+1})`.
pub struct DefectBlock {
    pub(crate) model: Arc<Model>,
    pub(crate) gravity: Vector3<f64>,
    pub(crate) h: f64,
    pub(crate) interval: usize,
    pub(crate) vars: Vec<usize>,
}

struct DefectParts<'a> {
    q0: &'a [f64],
    v0: &'a [f64],
    tau: &'a [f64],
    lambda: &'a [f64],
    q1: &'a [f64],
    v1: &'a [f64],
}

impl DefectBlock {
    fn split<'a>(&self, x: &'a [f64]) -> DefectParts<'a> {
        let (nq, nv, nj, ns) = (self.model.nq(), self.model.nv(), self.model.nj(), self.model.ns());
        let (q0, rest) = x.split_at(nq);
        let (v0, rest) = rest.split_at(nv);
        let (tau, rest) = rest.split_at(nj);
        let (lambda, rest) = rest.split_at(ns);
        let (q1, v1) = rest.split_at(nq);
        DefectParts {
            q0,
            v0,
            tau,
            lambda,
            q1,
            v1,
        }
    }

    /// Stacked `(q̇, v̇)` at `z = (q, v)` with fixed inputs.
    fn rates(&self, z: &[f64], tau: &[f64], lambda: &[f64]) -> Option<DVector<f64>> {
        let nq = self.model.nq();
        let (q, v) = z.split_at(nq);
        let a = knot_acceleration(&self.model, &self.gravity, q, v, tau, lambda)?;
        let qdot = configuration_rates(&self.model, q, v);
        Some(DVector::from_iterator(qdot.len() + a.len(), qdot.iter().chain(a.iter()).copied()))
    }

    /// `M⁻¹ y_v` and the input-gradient it induces, `(w_joints, J_s w)`.
    fn input_gradient(&self, q: &[f64], yv: &DVector<f64>) -> Option<DVector<f64>> {
        let model = &*self.model;
        let kin = Kinematics::new(model, q);
        let mass = mass_matrix_from(model, &kin);
        let w = mass.cholesky()?.solve(yv);
        let jac = contact_jacobians_from(model, &kin);
        let js_w = &jac.support * &w;
        let nb = model.n_base();
        Some(DVector::from_iterator(
            model.nj() + model.ns(),
            w.rows(nb, model.nj()).iter().chain(js_w.iter()).copied(),
        ))
    }
}

impl ConstraintBlock for DefectBlock {
    fn name(&self) -> String {
        format!("defect[{}]", self.interval)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.model.nq() + self.model.nv()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let p = self.split(x);
        let nq = self.model.nq();
        let z: Vec<f64> = p.q0.iter().chain(p.v0).copied().collect();
        let Some(f) = self.rates(&z, p.tau, p.lambda) else {
            out.iter_mut().for_each(|o| *o = f64::NAN);
            return;
        };
        for i in 0..nq {
            out[i] = p.q1[i] - p.q0[i] - self.h * f[i];
        }
        for i in 0..self.model.nv() {
            out[nq + i] = p.v1[i] - p.v0[i] - self.h * f[nq + i];
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let model = &*self.model;
        let (nq, nv, nj, ns) = (model.nq(), model.nv(), model.nj(), model.ns());
        let nz = nq + nv;
        let p = self.split(x);
        let mut jac = DMatrix::zeros(nz, x.len());
        let mut z: Vec<f64> = p.q0.iter().chain(p.v0).copied().collect();
        for j in 0..nz {
            let step = JACOBIAN_STEP * (1.0 + z[j].abs());
            let orig = z[j];
            z[j] = orig + step;
            let fp = self.rates(&z, p.tau, p.lambda);
            z[j] = orig - step;
            let fm = self.rates(&z, p.tau, p.lambda);
            z[j] = orig;
            match (fp, fm) {
                (Some(fp), Some(fm)) => {
                    for i in 0..nz {
                        jac[(i, j)] = -self.h * (fp[i] - fm[i]) / (2.0 * step);
                    }
                }
                _ => jac.column_mut(j).fill(f64::NAN),
            }
            jac[(j, j)] -= 1.0;
        }
        // input columns: M⁻¹ [Sᵀ | J_sᵀ]
        let kin = Kinematics::new(model, p.q0);
        let mass = mass_matrix_from(model, &kin);
        let support = contact_jacobians_from(model, &kin).support;
        let mut inputs = DMatrix::zeros(nv, nj + ns);
        let nb = model.n_base();
        for i in 0..nj {
            inputs[(nb + i, i)] = 1.0;
        }
        inputs.columns_mut(nj, ns).copy_from(&support.transpose());
        match mass.cholesky() {
            Some(chol) => {
                let sol = chol.solve(&inputs) * (-self.h);
                jac.view_mut((nq, nz), (nv, nj + ns)).copy_from(&sol);
            }
            None => jac.columns_mut(nz, nj + ns).fill(f64::NAN),
        }
        let next = nz + nj + ns;
        for i in 0..nz {
            jac[(i, next + i)] = 1.0;
        }
        jac
    }

    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let model = &*self.model;
        let (nq, nv, nj, ns) = (model.nq(), model.nv(), model.nj(), model.ns());
        let nz = nq + nv;
        let p = self.split(x);
        let yv = DVector::from_column_slice(&y[nq..]);
        let weights = DVector::from_column_slice(y);
        let phi = |z: &[f64]| -> f64 {
            self.rates(z, p.tau, p.lambda).map_or(f64::NAN, |f| -self.h * weights.dot(&f))
        };
        let mut hess = DMatrix::zeros(x.len(), x.len());

        // state block by forward second differences
        let z0: Vec<f64> = p.q0.iter().chain(p.v0).copied().collect();
        let steps: Vec<f64> = z0.iter().map(|z| HESSIAN_STEP * (1.0 + z.abs())).collect();
        let f0 = phi(&z0);
        let mut z = z0.clone();
        let single: Vec<f64> = (0..nz)
            .map(|i| {
                z[i] += steps[i];
                let f = phi(&z);
                z[i] = z0[i];
                f
            })
            .collect();
        for i in 0..nz {
            z[i] += steps[i];
            for j in i..nz {
                z[j] += steps[j];
                let fij = phi(&z);
                z[j] -= steps[j];
                let v = (fij - single[i] - single[j] + f0) / (steps[i] * steps[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
            z[i] = z0[i];
        }

        // input/configuration cross terms; inputs enter linearly
        let mut q = p.q0.to_vec();
        for j in 0..nq {
            let step = JACOBIAN_STEP * (1.0 + q[j].abs());
            let orig = q[j];
            q[j] = orig + step;
            let gp = self.input_gradient(&q, &yv);
            q[j] = orig - step;
            let gm = self.input_gradient(&q, &yv);
            q[j] = orig;
            for i in 0..nj + ns {
                let v = match (&gp, &gm) {
                    (Some(gp), Some(gm)) => -self.h * (gp[i] - gm[i]) / (2.0 * step),
                    _ => f64::NAN,
                };
                hess[(nz + i, j)] = v;
                hess[(j, nz + i)] = v;
            }
        }
        hess
    }
}

/// Five friction rows of one contact, `A λ_i`, before the normal floor.
pub fn cone_rows(contact: &ContactPoint) -> DMatrix<f64> {
    let c = contact.mu / std::f64::consts::SQRT_2;
    let (t, b, n) = (contact.tangent, contact.bitangent, contact.normal);
    let rows = [t - n * c, -t - n * c, b - n * c, -b - n * c, -n];
    DMatrix::from_fn(5, 3, |r, k| rows[r][k])
}

/// Stationary contact points at one knot, over the local variables `q_k`.
pub struct FeetBlock {
    pub(crate) model: Arc<Model>,
    pub(crate) anchors: Vec<Vector3<f64>>,
    pub(crate) knot: usize,
    pub(crate) vars: Vec<usize>,
}

impl ConstraintBlock for FeetBlock {
    fn name(&self) -> String {
        format!("feet[{}]", self.knot)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        3 * self.anchors.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let kin = Kinematics::new(&self.model, x);
        for (i, anchor) in self.anchors.iter().enumerate() {
            let p = kin.point_position(&self.model, PointId::Contact(i)) - anchor;
            out[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let model = &*self.model;
        let kin = Kinematics::new(model, x);
        let mut jac = DMatrix::zeros(self.dim(), x.len());
        for i in 0..self.anchors.len() {
            let j = kin.point_jacobian(model, PointId::Contact(i));
            jac.rows_mut(3 * i, 3).copy_from(&kin.to_configuration_jacobian(model, &j));
        }
        jac
    }
}

/// Gripper waypoint at one knot: position plus two axis projections.
pub struct GripperBlock {
    pub(crate) model: Arc<Model>,
    pub(crate) label: &'static str,
    pub(crate) target: Vector3<f64>,
    /// Unit vectors spanning the plane orthogonal to the target axis.
    pub(crate) span: [Vector3<f64>; 2],
    pub(crate) vars: Vec<usize>,
}

impl GripperBlock {
    fn approach_axis(&self, kin: &Kinematics) -> Vector3<f64> {
        let ee = &self.model.end_effector;
        kin.body_rotation[ee.body] * ee.axis
    }
}

impl ConstraintBlock for GripperBlock {
    fn name(&self) -> String {
        format!("gripper[{}]", self.label)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        5
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let kin = Kinematics::new(&self.model, x);
        let p = kin.point_position(&self.model, PointId::EndEffector) - self.target;
        let a = self.approach_axis(&kin);
        out[..3].copy_from_slice(p.as_slice());
        out[3] = a.dot(&self.span[0]);
        out[4] = a.dot(&self.span[1]);
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let model = &*self.model;
        let kin = Kinematics::new(model, x);
        let mut jac = DMatrix::zeros(5, x.len());
        let lin = kin.point_jacobian(model, PointId::EndEffector);
        jac.rows_mut(0, 3).copy_from(&kin.to_configuration_jacobian(model, &lin));
        let ang = kin.to_configuration_jacobian(model, &kin.angular_jacobian(model, model.end_effector.body));
        let a = self.approach_axis(&kin);
        for (r, t) in self.span.iter().enumerate() {
            let c = a.cross(t);
            jac.row_mut(3 + r).copy_from(&(ang.tr_mul(&c)).transpose());
        }
        jac
    }
}
