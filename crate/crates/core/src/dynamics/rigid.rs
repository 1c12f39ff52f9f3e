//! Inverse dynamics (RNEA) and the joint-space mass matrix (CRBA).
//!
//! All spatial quantities are expressed in the inertial frame at its origin,
//! so composite inertias are plain sums and no frame transforms are needed.
//! Motion vectors are `(ω, v_O)`, force vectors `(n_O, f)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::Kinematics;
use super::mrp::skew;
use crate::model::Model;

#[derive(Debug, Clone, Copy)]
struct Motion {
    ang: Vector3<f64>,
    lin: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Force {
    ang: Vector3<f64>,
    lin: Vector3<f64>,
}

impl Motion {
    fn zero() -> Self {
        Motion {
            ang: Vector3::zeros(),
            lin: Vector3::zeros(),
        }
    }
    fn add(self, o: Motion) -> Motion {
        Motion {
            ang: self.ang + o.ang,
            lin: self.lin + o.lin,
        }
    }
    fn scale(self, s: f64) -> Motion {
        Motion {
            ang: self.ang * s,
            lin: self.lin * s,
        }
    }
    fn cross_motion(&self, m: &Motion) -> Motion {
        Motion {
            ang: self.ang.cross(&m.ang),
            lin: self.ang.cross(&m.lin) + self.lin.cross(&m.ang),
        }
    }
    fn cross_force(&self, f: &Force) -> Force {
        Force {
            ang: self.ang.cross(&f.ang) + self.lin.cross(&f.lin),
            lin: self.ang.cross(&f.lin),
        }
    }
    fn dot(&self, f: &Force) -> f64 {
        self.ang.dot(&f.ang) + self.lin.dot(&f.lin)
    }
}

/// Rigid-body inertia about the world origin: mass, first moment `m c`, and
/// rotational inertia about the origin.
#[derive(Debug, Clone, Copy)]
struct WorldInertia {
    mass: f64,
    first: Vector3<f64>,
    rot: Matrix3<f64>,
}

impl WorldInertia {
    fn of_body(model: &Model, kin: &Kinematics, body: usize) -> Self {
        let b = &model.bodies[body].inertia;
        let r = kin.body_rotation[body];
        let c = kin.body_position[body] + r * b.com;
        let ic = r * b.rotational * r.transpose();
        let sc = skew(&c);
        WorldInertia {
            mass: b.mass,
            first: c * b.mass,
            rot: ic - sc * sc * b.mass,
        }
    }

    fn add(&mut self, o: &WorldInertia) {
        self.mass += o.mass;
        self.first += o.first;
        self.rot += o.rot;
    }

    fn apply(&self, m: &Motion) -> Force {
        Force {
            ang: self.rot * m.ang + self.first.cross(&m.lin),
            lin: m.lin * self.mass - self.first.cross(&m.ang),
        }
    }
}

/// Motion subspace columns of the floating base in the mixed twist
/// convention `(ṙ, ω_B)`.
fn base_columns(kin: &Kinematics) -> [Motion; 6] {
    let r = kin.base_rotation;
    let sr = skew(&kin.base_position) * r;
    let mut cols = [Motion::zero(); 6];
    for i in 0..3 {
        cols[i] = Motion {
            ang: Vector3::zeros(),
            lin: Vector3::ith(i, 1.0),
        };
        cols[3 + i] = Motion {
            ang: r.column(i).into(),
            lin: sr.column(i).into(),
        };
    }
    cols
}

fn joint_column(kin: &Kinematics, j: usize) -> Motion {
    let z = kin.joint_axis[j];
    Motion {
        ang: z,
        lin: kin.joint_origin[j].cross(&z),
    }
}

/// Recursive Newton–Euler inverse dynamics: returns `M(q) v̇ + h(q, v)`.
pub(crate) fn rnea(model: &Model, kin: &Kinematics, v: &[f64], vdot: &[f64], gravity: &Vector3<f64>) -> DVector<f64> {
    let nb = model.n_base();
    let nbody = model.bodies.len();
    let mut vel = vec![Motion::zero(); nbody];
    let mut acc = vec![Motion::zero(); nbody];

    let gravity_acc = Motion {
        ang: Vector3::zeros(),
        lin: -gravity,
    };
    let base_cols = if model.floating_base { Some(base_columns(kin)) } else { None };
    if let Some(cols) = &base_cols {
        let mut v0 = Motion::zero();
        let mut a0 = Motion::zero();
        for i in 0..6 {
            v0 = v0.add(cols[i].scale(v[i]));
            a0 = a0.add(cols[i].scale(vdot[i]));
        }
        // time derivative of the base subspace at constant v: (0, ṙ × ω_world)
        let r_dot = Vector3::new(v[0], v[1], v[2]);
        let a_bias = Motion {
            ang: Vector3::zeros(),
            lin: r_dot.cross(&v0.ang),
        };
        vel[0] = v0;
        acc[0] = a0.add(a_bias).add(gravity_acc);
    } else {
        acc[0] = gravity_acc;
    }

    for (j, joint) in model.joints.iter().enumerate() {
        let (p, c) = (joint.parent_body, joint.child_body);
        let s = joint_column(kin, j);
        let sq = s.scale(v[nb + j]);
        vel[c] = vel[p].add(sq);
        acc[c] = acc[p].add(s.scale(vdot[nb + j])).add(vel[c].cross_motion(&sq));
    }

    let mut force: Vec<Force> = (0..nbody)
        .map(|b| {
            let inertia = WorldInertia::of_body(model, kin, b);
            let f = inertia.apply(&acc[b]);
            let hv = inertia.apply(&vel[b]);
            let g = vel[b].cross_force(&hv);
            Force {
                ang: f.ang + g.ang,
                lin: f.lin + g.lin,
            }
        })
        .collect();

    let mut tau = DVector::zeros(model.nv());
    for (j, joint) in model.joints.iter().enumerate().rev() {
        let c = joint.child_body;
        tau[nb + j] = joint_column(kin, j).dot(&force[c]);
        let fc = force[c];
        let fp = &mut force[joint.parent_body];
        fp.ang += fc.ang;
        fp.lin += fc.lin;
    }
    if let Some(cols) = &base_cols {
        for i in 0..6 {
            tau[i] = cols[i].dot(&force[0]);
        }
    }
    tau
}

/// Composite rigid-body algorithm.
pub(crate) fn crba(model: &Model, kin: &Kinematics) -> DMatrix<f64> {
    let nb = model.n_base();
    let nv = model.nv();
    let nbody = model.bodies.len();
    let mut composite: Vec<WorldInertia> = (0..nbody).map(|b| WorldInertia::of_body(model, kin, b)).collect();
    for joint in model.joints.iter().rev() {
        let child = composite[joint.child_body];
        composite[joint.parent_body].add(&child);
    }

    let base_cols = if model.floating_base { Some(base_columns(kin)) } else { None };
    let mut mass = DMatrix::zeros(nv, nv);
    for (j, joint) in model.joints.iter().enumerate() {
        let s = joint_column(kin, j);
        let f = composite[joint.child_body].apply(&s);
        let col = nb + j;
        mass[(col, col)] = s.dot(&f);
        let mut body = joint.parent_body;
        while let Some(a) = model.bodies[body].parent_joint {
            let value = joint_column(kin, a).dot(&f);
            mass[(col, nb + a)] = value;
            mass[(nb + a, col)] = value;
            body = model.joints[a].parent_body;
        }
        if let Some(cols) = &base_cols {
            for (i, c) in cols.iter().enumerate() {
                let value = c.dot(&f);
                mass[(col, i)] = value;
                mass[(i, col)] = value;
            }
        }
    }
    if let Some(cols) = &base_cols {
        for i in 0..6 {
            let f = composite[0].apply(&cols[i]);
            for k in 0..=i {
                let value = cols[k].dot(&f);
                mass[(i, k)] = value;
                mass[(k, i)] = value;
            }
        }
    }
    mass
}
