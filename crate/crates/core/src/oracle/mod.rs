//! Brute-force disturbance rejection capacity by directional linear programs.
//!
//! For a direction `χ` the capacity is the largest `ρ` for which some
//! admissible `(τ⁺, λ⁺)` produces the same generalized force as the knot's
//! `(τ, λ)` plus the disturbance `ρχ` at the end effector. Unlike the affine
//! reformulation, every direction gets its own response, so the minimum over
//! directions bounds the reformulated radius from above.

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::contact_jacobians;
use crate::model::{ContactPoint, Model};
use crate::nlp::{lp_solve, LpError};
use crate::robustness::PolytopeRows;

/// Directions used by acceptance runs.
pub const ACCEPTANCE_DIRECTIONS: usize = 1024;
/// Directions used by tests and as the command-line default.
pub const DEFAULT_DIRECTIONS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("knot inputs admit no undisturbed solution")]
    InconsistentKnot,
    #[error("directional program failed: {0}")]
    Lp(LpError),
    #[error("direction set is empty")]
    NoDirections,
}

/// Unit directions closed under negation. Hemisphere heights follow the
/// base-2 radical inverse and azimuths the golden angle, so a set is a prefix of
/// any larger set built with the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub directions: Vec<Vector3<f64>>,
    pub seed: u64,
}

fn radical_inverse(mut i: u64) -> f64 {
    let mut inv = 0.0;
    let mut f = 0.5;
    while i > 0 {
        inv += f * (i & 1) as f64;
        i >>= 1;
        f *= 0.5;
    }
    inv
}

impl DirectionSet {
    /// `n_dirs` rounded up to an even count.
    pub fn new(n_dirs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // uniform random rotation
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let tau = std::f64::consts::TAU;
        let quat = Quaternion::new(
            u1.sqrt() * (tau * u3).cos(),
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            u1.sqrt() * (tau * u3).sin(),
        );
        let rotation = UnitQuaternion::from_quaternion(quat);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let half = n_dirs.div_ceil(2);
        let mut directions = Vec::with_capacity(2 * half);
        for i in 0..half {
            // upper hemisphere only; negation supplies the rest
            let z = 1.0 - radical_inverse(i as u64);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let d = (rotation * Vector3::new(r * phi.cos(), r * phi.sin(), z)).normalize();
            directions.push(d);
            directions.push(-d);
        }
        DirectionSet { directions, seed }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Directional programs of one knot, sharing everything but the disturbance
/// column.
pub struct KnotPrograms {
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_ub: DMatrix<f64>,
    b_ub: DVector<f64>,
    bounds: Vec<(f64, f64)>,
    /// `J_eᵀ`, `n_v × 3`.
    je_t: DMatrix<f64>,
}

impl KnotPrograms {
    /// Variables are `(ρ, τ⁺, λ⁺)`.
    pub fn new(model: &Model, contacts: &[ContactPoint], q: &[f64], tau: &[f64], lambda: &[f64]) -> Self {
        let (nv, nj, ns, nb) = (model.nv(), model.nj(), model.ns(), model.n_base());
        let jac = contact_jacobians(model, q);
        let rows = PolytopeRows::new(model, contacts);
        let n = 1 + nj + ns;
        let mut a_eq = DMatrix::zeros(nv, n);
        for j in 0..nj {
            a_eq[(nb + j, 1 + j)] = 1.0;
        }
        a_eq.columns_mut(1 + nj, ns).copy_from(&jac.support.transpose());
        let mut b_eq = jac.support.tr_mul(&DVector::from_column_slice(lambda));
        for (j, t) in tau.iter().enumerate() {
            b_eq[nb + j] += t;
        }
        let mut a_ub = DMatrix::zeros(rows.a_lambda.nrows(), n);
        a_ub.columns_mut(1 + nj, ns).copy_from(&rows.a_lambda);
        let mut bounds = vec![(0.0, f64::INFINITY)];
        bounds.extend(model.joints.iter().map(|j| (-j.tau_limit, j.tau_limit)));
        bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(ns));
        KnotPrograms {
            a_eq,
            b_eq,
            a_ub,
            b_ub: rows.b_lambda,
            bounds,
            je_t: jac.end_effector.transpose(),
        }
    }

    /// Largest rejectable magnitude along `chi`, infinite when unbounded.
    pub fn capacity(&self, chi: &Vector3<f64>) -> Result<f64, OracleError> {
        let mut a_eq = self.a_eq.clone();
        a_eq.set_column(0, &(&self.je_t * chi));
        let mut c = DVector::zeros(self.bounds.len());
        c[0] = -1.0;
        match lp_solve(&self.a_ub, &self.b_ub, &a_eq, &self.b_eq, &c, &self.bounds) {
            Ok(sol) => Ok(sol.x[0].max(0.0)),
            Err(LpError::Unbounded) => Ok(f64::INFINITY),
            Err(LpError::Infeasible) => Err(OracleError::InconsistentKnot),
            Err(e) => Err(OracleError::Lp(e)),
        }
    }
}

pub fn directional_capacity(
    model: &Model,
    contacts: &[ContactPoint],
    q: &[f64],
    _v: &[f64],
    tau: &[f64],
    lambda: &[f64],
    chi: &Vector3<f64>,
) -> Result<f64, OracleError> {
    KnotPrograms::new(model, contacts, q, tau, lambda).capacity(&chi.normalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMinimum {
    pub rho_min: f64,
    pub direction: Vector3<f64>,
}

fn minimum_over(programs: &KnotPrograms, directions: &[Vector3<f64>]) -> Result<OracleMinimum, OracleError> {
    let mut best: Option<OracleMinimum> = None;
    for d in directions {
        let rho = programs.capacity(d)?;
        if best.as_ref().is_none_or(|b| rho < b.rho_min) {
            best = Some(OracleMinimum {
                rho_min: rho,
                direction: *d,
            });
        }
    }
    best.ok_or(OracleError::NoDirections)
}

/// Smallest directional capacity over a seeded direction set.
#[allow(clippy::too_many_arguments)]
pub fn suf_bruteforce(
    model: &Model,
    contacts: &[ContactPoint],
    q: &[f64],
    _v: &[f64],
    tau: &[f64],
    lambda: &[f64],
    n_dirs: usize,
    seed: u64,
) -> Result<OracleMinimum, OracleError> {
    let programs = KnotPrograms::new(model, contacts, q, tau, lambda);
    minimum_over(&programs, &DirectionSet::new(n_dirs, seed).directions)
}

/// Sampled minimum followed by a compass search on the sphere from the
/// three best sampled directions. Every evaluated direction is a genuine
/// capacity, so the result stays an upper bound on the true minimum.
#[allow(clippy::too_many_arguments)]
pub fn suf_refined(
    model: &Model,
    contacts: &[ContactPoint],
    q: &[f64],
    _v: &[f64],
    tau: &[f64],
    lambda: &[f64],
    n_dirs: usize,
    seed: u64,
) -> Result<OracleMinimum, OracleError> {
    let programs = KnotPrograms::new(model, contacts, q, tau, lambda);
    let set = DirectionSet::new(n_dirs, seed);
    let mut sampled = Vec::with_capacity(set.len());
    for d in &set.directions {
        sampled.push((programs.capacity(d)?, *d));
    }
    if sampled.is_empty() {
        return Err(OracleError::NoDirections);
    }
    sampled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let initial_step = (4.0 * std::f64::consts::PI / set.len() as f64).sqrt();
    let mut best = OracleMinimum {
        rho_min: sampled[0].0,
        direction: sampled[0].1,
    };
    for &(rho, d) in sampled.iter().take(3) {
        let local = compass_search(&programs, d, rho, initial_step)?;
        if local.rho_min < best.rho_min {
            best = local;
        }
    }
    Ok(best)
}

fn compass_search(
    programs: &KnotPrograms,
    start: Vector3<f64>,
    value: f64,
    initial_step: f64,
) -> Result<OracleMinimum, OracleError> {
    let mut best = OracleMinimum {
        rho_min: value,
        direction: start,
    };
    let mut step = initial_step;
    while step > 1e-7 {
        let d = best.direction;
        let reference = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t1 = d.cross(&reference).normalize();
        let t2 = d.cross(&t1);
        let mut improved = false;
        for t in [t1, -t1, t2, -t2] {
            let trial = (d + t * step).normalize();
            let rho = programs.capacity(&trial)?;
            if rho < best.rho_min {
                best = OracleMinimum {
                    rho_min: rho,
                    direction: trial,
                };
                improved = true;
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, load_scenario};
    use crate::transcription::default_seed;

    fn data(path: &str) -> String {
        format!("{}/../../data/{path}", env!("CARGO_MANIFEST_DIR"))
    }

    fn arm() -> Model {
        load_model(data("models/fixed_arm.json")).unwrap()
    }

    /// Per-direction elimination for the fixed arm: `τ⁺ = τ − ρ J_eᵀχ`.
    fn analytic_arm_capacity(model: &Model, q: &[f64], tau: &[f64], chi: &Vector3<f64>) -> f64 {
        let d = contact_jacobians(model, q).end_effector.tr_mul(chi);
        model
            .joints
            .iter()
            .enumerate()
            .filter(|(j, _)| d[*j].abs() > 1e-14)
            .map(|(j, joint)| {
                if d[j] > 0.0 {
                    (tau[j] + joint.tau_limit) / d[j]
                } else {
                    (joint.tau_limit - tau[j]) / -d[j]
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn directions_are_unit_and_antipodal() {
        let set = DirectionSet::new(101, 3);
        assert_eq!(set.len(), 102);
        for d in &set.directions {
            assert!((d.norm() - 1.0).abs() <= 1e-12);
            assert!(set.directions.iter().any(|e| (d + e).norm() < 1e-12));
        }
    }

    #[test]
    fn direction_sets_are_nested_and_deterministic() {
        let small = DirectionSet::new(32, 9);
        let large = DirectionSet::new(512, 9);
        assert_eq!(small, DirectionSet::new(32, 9));
        assert_eq!(&large.directions[..32], &small.directions[..]);
        assert_ne!(DirectionSet::new(32, 10), small);
    }

    #[test]
    fn directions_cover_the_sphere() {
        let set = DirectionSet::new(512, 1);
        let probe = DirectionSet::new(2000, 77);
        let worst = probe
            .directions
            .iter()
            .map(|p| set.directions.iter().map(|d| p.dot(d)).fold(-1.0, f64::max))
            .fold(1.0, f64::min);
        // no probe farther than ~12° from the set
        assert!(worst > 0.978, "{worst}");
    }

    #[test]
    fn arm_capacity_matches_elimination() {
        let model = arm();
        let q = [0.4, -0.7, 1.1];
        let tau: [f64; 3] = [3.0, -8.0, 2.5];
        for (i, chi) in DirectionSet::new(40, 2).directions.iter().enumerate() {
            let lp = directional_capacity(&model, &[], &q, &[0.0; 3], &tau, &[], chi).unwrap();
            let exact = analytic_arm_capacity(&model, &q, &tau, chi);
            assert!((lp - exact).abs() <= 1e-8 * (1.0 + exact), "direction {i}: {lp} vs {exact}");
        }
    }

    #[test]
    fn opposite_directions_differ_for_offset_torques() {
        let model = arm();
        let q = [0.0, -0.7, 1.1];
        let tau = [0.0, -15.0, 0.0];
        let chi = Vector3::z();
        let up = directional_capacity(&model, &[], &q, &[0.0; 3], &tau, &[], &chi).unwrap();
        let down = directional_capacity(&model, &[], &q, &[0.0; 3], &tau, &[], &-chi).unwrap();
        assert!((up - analytic_arm_capacity(&model, &q, &tau, &chi)).abs() < 1e-8 * (1.0 + up));
        assert!((down - analytic_arm_capacity(&model, &q, &tau, &-chi)).abs() < 1e-8 * (1.0 + down));
        assert!((up - down).abs() > 1.0);
    }

    #[test]
    fn saturated_direction_has_zero_capacity() {
        let model = arm();
        let q = [0.0, -0.7, 1.1];
        let tau = [model.joints[0].tau_limit, 0.0, 0.0];
        // a lateral push loads the yaw joint
        let je = contact_jacobians(&model, &q).end_effector;
        let chi = Vector3::new(je[(0, 0)], je[(1, 0)], je[(2, 0)]).normalize();
        let rho = directional_capacity(&model, &[], &q, &[0.0; 3], &tau, &[], &-chi).unwrap();
        assert!(rho < 1e-9, "{rho}");
    }

    #[test]
    fn more_directions_never_raise_the_minimum() {
        let scenario = load_scenario(data("scenarios/flat.json")).unwrap();
        let seed = default_seed(&scenario);
        let contacts = scenario.contacts();
        let run = |n| {
            suf_bruteforce(&scenario.model, &contacts, &seed.q[0], &seed.v[0], &seed.tau[0], &seed.lambda[0], n, 4)
                .unwrap()
                .rho_min
        };
        let (coarse, fine) = (run(32), run(512));
        assert!(fine <= coarse);
        assert!(fine > 0.0);
    }

    #[test]
    fn refined_arm_minimum_converges_to_closed_form() {
        let model = arm();
        let q = [0.4, -0.7, 1.1];
        let tau: [f64; 3] = [3.0, -8.0, 2.5];
        let je = contact_jacobians(&model, &q).end_effector;
        let exact = model
            .joints
            .iter()
            .enumerate()
            .map(|(j, joint)| (joint.tau_limit - tau[j].abs()) / je.column(j).norm())
            .fold(f64::INFINITY, f64::min);
        let refined = suf_refined(&model, &[], &q, &[0.0; 3], &tau, &[], 256, 1).unwrap();
        let sampled = suf_bruteforce(&model, &[], &q, &[0.0; 3], &tau, &[], 256, 1).unwrap();
        assert!(refined.rho_min <= sampled.rho_min);
        assert!((refined.rho_min - exact).abs() <= 1e-6 * exact, "{} vs {exact}", refined.rho_min);
    }

    #[test]
    fn violated_knot_is_inconsistent() {
        let model = arm();
        let tau = [2.0 * model.joints[0].tau_limit, 0.0, 0.0];
        let err = directional_capacity(&model, &[], &[0.0; 3], &[0.0; 3], &tau, &[], &Vector3::x());
        assert_eq!(err, Err(OracleError::InconsistentKnot));
    }
}
