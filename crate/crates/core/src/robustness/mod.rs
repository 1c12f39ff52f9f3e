//! Robustness to end-effector disturbance forces.
//!
//! A disturbance `f = ρχ` with `‖χ‖ = 1` is rejected by affine adjustments
//! `τ⁺ = τ + K̄τ χ`, `λ⁺ = λ + K̄λ χ` that leave the accelerations unchanged:
//! `Sᵀ K̄τ + J_sᵀ K̄λ + J_eᵀ ρ = 0`. The actuated rows give `K̄τ` directly,
//! so only the floating-base rows remain as constraints. Requiring the
//! adjusted inputs to stay inside their polytopes for every `χ` turns each
//! polytope row into a second-order cone constraint.

mod blocks;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

pub use blocks::{wrench_map, BaseWrenchBlock, ContactSufBlock, SquaredConeBlock, TorqueSufBlock};

use crate::dynamics::ContactJacobians;
use crate::model::{ContactPoint, Model, Scenario};
use crate::nlp::{solve, BlockKind, LinearBlock, NlpProblem, QuadraticObjective, SolveOptions, SolveStatus};
use crate::transcription::{stacked_cone, DecisionLayout, MeshGrid, Trajectory, Transcription};

/// Smoothing inside `√(xᵀx + ε²)`, in newtons.
pub const NORM_SMOOTHING: f64 = 1e-6;

/// Slack below which a nominal input counts as violating its polytope.
const NOMINAL_TOL: f64 = 1e-6;

/// Nominal slack below which a row admits no adjustment at all.
pub const ACTIVE_SLACK: f64 = 1e-5;

/// Weight of the `Σ K̄λ²` term that makes the gains unique in the robust
/// objective, in 1/N.
pub const GAIN_WEIGHT: f64 = 1e-4;

/// Relative singular value treated as zero.
const NULL_TOL: f64 = 1e-10;

pub fn smooth_norm(x: &Vector3<f64>) -> f64 {
    (x.norm_squared() + NORM_SMOOTHING * NORM_SMOOTHING).sqrt()
}

pub fn smooth_norm_hessian(x: &Vector3<f64>) -> Matrix3<f64> {
    let n = smooth_norm(x);
    (Matrix3::identity() - x * x.transpose() / (n * n)) / n
}

/// Torque and contact-force polytopes `A_τ τ ≤ b_τ`, `A_λ λ ≤ b_λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeRows {
    /// `[I; −I]`.
    pub a_tau: DMatrix<f64>,
    /// `[τ_U; −τ_L]`.
    pub b_tau: DVector<f64>,
    /// Four pyramid rows and the negated normal per contact.
    pub a_lambda: DMatrix<f64>,
    /// Zero except the normal rows, which carry the force floor.
    pub b_lambda: DVector<f64>,
}

impl PolytopeRows {
    pub fn new(model: &Model, contacts: &[ContactPoint]) -> Self {
        let nj = model.nj();
        let mut a_tau = DMatrix::zeros(2 * nj, nj);
        let mut b_tau = DVector::zeros(2 * nj);
        for (j, joint) in model.joints.iter().enumerate() {
            a_tau[(j, j)] = 1.0;
            a_tau[(nj + j, j)] = -1.0;
            b_tau[j] = joint.tau_limit;
            b_tau[nj + j] = joint.tau_limit;
        }
        let (a_lambda, b_lambda) = stacked_cone(contacts);
        PolytopeRows {
            a_tau,
            b_tau,
            a_lambda,
            b_lambda,
        }
    }

    /// Smallest `b_τ − A_τ τ`.
    pub fn torque_slack(&self, tau: &[f64]) -> f64 {
        (&self.b_tau - &self.a_tau * DVector::from_column_slice(tau)).min()
    }

    /// Smallest `b_λ − A_λ λ`, infinite without contacts.
    pub fn cone_slack(&self, lambda: &[f64]) -> f64 {
        if self.b_lambda.is_empty() {
            return f64::INFINITY;
        }
        (&self.b_lambda - &self.a_lambda * DVector::from_column_slice(lambda)).min()
    }
}

/// `K̄τ = −J_sᵀ K̄λ − J_eᵀ ρ` restricted to the actuated rows, `n_j × 3`.
pub fn ktau_implicit(jac: &ContactJacobians, n_base: usize, k_lambda: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let nv = jac.end_effector.ncols();
    let response = stacked_response(jac, k_lambda, rho);
    -response.rows(n_base, nv - n_base)
}

/// Floating-base rows of `J_sᵀ K̄λ + J_eᵀ ρ`, `n_b × 3`.
pub fn base_wrench_residual(jac: &ContactJacobians, n_base: usize, k_lambda: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    stacked_response(jac, k_lambda, rho).rows(0, n_base).into_owned()
}

fn stacked_response(jac: &ContactJacobians, k_lambda: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut r = jac.end_effector.transpose() * rho;
    if jac.support.nrows() > 0 {
        r += jac.support.tr_mul(k_lambda);
    }
    r
}

/// Row `r`: `a_rᵀ x + smooth_norm(a_rᵀ K) − b_r`.
fn conic_rows(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>, k: &DMatrix<f64>) -> DVector<f64> {
    let lin = a * x - b;
    let ak = a * k;
    DVector::from_fn(a.nrows(), |r, _| lin[r] + smooth_norm(&Vector3::new(ak[(r, 0)], ak[(r, 1)], ak[(r, 2)])))
}

pub fn torque_suf_residuals(
    rows: &PolytopeRows,
    jac: &ContactJacobians,
    n_base: usize,
    tau: &[f64],
    k_lambda: &DMatrix<f64>,
    rho: f64,
) -> DVector<f64> {
    let ktau = ktau_implicit(jac, n_base, k_lambda, rho);
    conic_rows(&rows.a_tau, &rows.b_tau, &DVector::from_column_slice(tau), &ktau)
}

pub fn contact_suf_residuals(rows: &PolytopeRows, lambda: &[f64], k_lambda: &DMatrix<f64>) -> DVector<f64> {
    conic_rows(&rows.a_lambda, &rows.b_lambda, &DVector::from_column_slice(lambda), k_lambda)
}

/// Nominal layout followed by `ρ_k` for every interval and then the
/// row-major `K̄λ_k` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RobustLayout {
    pub nominal: DecisionLayout,
}

impl RobustLayout {
    pub fn new(nominal: DecisionLayout) -> Self {
        RobustLayout { nominal }
    }

    pub fn rho(&self, k: usize) -> usize {
        self.nominal.len() + k
    }

    pub fn k_lambda(&self, k: usize) -> Range<usize> {
        let n = 3 * self.nominal.ns;
        let s = self.nominal.len() + self.nominal.intervals() + k * n;
        s..s + n
    }

    pub fn extra(&self) -> usize {
        self.nominal.intervals() * (1 + 3 * self.nominal.ns)
    }

    pub fn len(&self) -> usize {
        self.nominal.len() + self.extra()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Packs a trajectory; missing gains and radii start at zero.
    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let mut x = self.nominal.pack(traj);
        x.resize(self.len(), 0.0);
        for k in 0..self.nominal.intervals() {
            if let Some(rho) = &traj.rho {
                x[self.rho(k)] = rho[k].max(0.0);
            }
            if let Some(gains) = &traj.k_lambda {
                x[self.k_lambda(k)].copy_from_slice(&gains[k]);
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64], scenario: &Scenario, status: SolveStatus) -> Trajectory {
        let mut traj = self.nominal.unpack(x, scenario, status);
        let n = self.nominal.intervals();
        traj.rho = Some((0..n).map(|k| x[self.rho(k)]).collect());
        traj.k_lambda = Some((0..n).map(|k| x[self.k_lambda(k)].to_vec()).collect());
        traj
    }
}

/// A nominal problem extended with the robustness variables and blocks.
pub struct RobustTranscription {
    pub problem: NlpProblem,
    pub layout: RobustLayout,
    pub mesh: MeshGrid,
    pub warnings: Vec<String>,
}

/// Adds `ρ_k ≥ 0`, `K̄λ_k` and the three robustness blocks per interval,
/// replaces any objective by `−Σ ρ_k` and keeps every nominal constraint.
pub fn extend_problem(nominal: Transcription, scenario: &Scenario) -> RobustTranscription {
    let Transcription {
        mut problem,
        layout,
        mesh,
        warnings,
    } = nominal;
    let robust = RobustLayout::new(layout);
    let model = Arc::new(scenario.model.clone());
    let contacts = scenario.contacts();
    let rows = PolytopeRows::new(&model, &contacts);
    let (ns, nb) = (model.ns(), model.n_base());
    let n = layout.intervals();

    problem.blocks.retain(|b| b.kind() != BlockKind::Objective);
    problem.add_variables(n, 0.0, f64::INFINITY);
    problem.add_variables(3 * ns * n, f64::NEG_INFINITY, f64::INFINITY);
    debug_assert_eq!(problem.n(), robust.len());

    for k in 0..n {
        let gains: Vec<usize> = std::iter::once(robust.rho(k)).chain(robust.k_lambda(k)).collect();
        let q: Vec<usize> = layout.q(k).collect();
        if nb > 0 {
            problem.add(BaseWrenchBlock::new(
                model.clone(),
                nb,
                k.to_string(),
                q.iter().copied().chain(gains.iter().copied()).collect(),
            ));
        }
        problem.add(TorqueSufBlock::new(
            model.clone(),
            nb,
            rows.a_tau.clone(),
            rows.b_tau.clone(),
            k.to_string(),
            q.iter().copied().chain(layout.tau(k)).chain(gains.iter().copied()).collect(),
        ));
        if ns > 0 {
            problem.add(ContactSufBlock {
                a: rows.a_lambda.clone(),
                b: rows.b_lambda.clone(),
                label: k.to_string(),
                vars: layout.lambda(k).chain(robust.k_lambda(k)).collect(),
            });
        }
    }
    // one term per interval keeps the KKT pattern banded
    for k in 0..n {
        let gains: Vec<usize> = robust.k_lambda(k).collect();
        let mut weights = vec![0.0];
        weights.extend(std::iter::repeat_n(GAIN_WEIGHT, gains.len()));
        let mut linear = vec![-1.0];
        linear.extend(std::iter::repeat_n(0.0, gains.len()));
        problem.add(QuadraticObjective {
            name: format!("robustness[{k}]"),
            vars: std::iter::once(robust.rho(k)).chain(gains).collect(),
            weights,
            linear,
        });
    }
    RobustTranscription {
        problem,
        layout: robust,
        mesh,
        warnings,
    }
}

/// Largest disturbance radius one knot rejects with affine responses.
#[derive(Debug, Clone)]
pub struct SufEvaluation {
    pub rho: f64,
    pub k_lambda: DMatrix<f64>,
    pub status: SolveStatus,
    pub min_torque_slack: f64,
    pub min_cone_slack: f64,
    pub diagnostic: Option<String>,
}

impl SufEvaluation {
    fn rejected(ns: usize, torque: f64, cone: f64, diagnostic: String) -> Self {
        SufEvaluation {
            rho: 0.0,
            k_lambda: DMatrix::zeros(ns, 3),
            status: SolveStatus::InfeasibleDetected,
            min_torque_slack: torque,
            min_cone_slack: cone,
            diagnostic: Some(diagnostic),
        }
    }
}

/// Tolerances of the per-knot subproblem.
pub fn knot_solve_options() -> SolveOptions {
    SolveOptions {
        tol_feas: 1e-9,
        tol_opt: 1e-7,
        max_iter: 300,
        mu0: 0.1,
    }
}

/// Solves `max ρ` over `w = (ρ, K̄λ)` at a fixed knot. Velocities do not
/// enter: the disturbance response leaves the accelerations unchanged.
///
/// With the knot fixed every constraint is a cone over a linear map of `w`
/// with a constant bound. The base-wrench rows and the rows whose nominal
/// slack is below [`ACTIVE_SLACK`] admit only `L w = 0`; these are removed by
/// optimizing over their null space.
pub fn evaluate_suf_at_knot(
    model: &Model,
    contacts: &[ContactPoint],
    q: &[f64],
    _v: &[f64],
    tau: &[f64],
    lambda: &[f64],
) -> SufEvaluation {
    let rows = PolytopeRows::new(model, contacts);
    let (nj, ns, nb) = (model.nj(), model.ns(), model.n_base());
    let torque = rows.torque_slack(tau);
    let cone = rows.cone_slack(lambda);
    if torque < -NOMINAL_TOL {
        return SufEvaluation::rejected(ns, torque, cone, format!("torque limit exceeded by {:.3e} N·m", -torque));
    }
    if cone < -NOMINAL_TOL {
        return SufEvaluation::rejected(ns, torque, cone, format!("contact force leaves its cone by {:.3e} N", -cone));
    }

    let n = 1 + 3 * ns;
    let g = wrench_map(model, q);
    // x_r = p_r (G W) as a 3 × n map of w
    let response_map = |p: &DVector<f64>| -> DMatrix<f64> {
        let pg = g.tr_mul(p);
        DMatrix::from_fn(3, n, |c, u| match u {
            0 => pg[ns + c],
            u if (u - 1) % 3 == c => pg[(u - 1) / 3],
            _ => 0.0,
        })
    };
    let mut cones: Vec<(DMatrix<f64>, f64)> = Vec::new();
    let mut pinned: Vec<DMatrix<f64>> = Vec::new();
    for i in 0..nb {
        let mut p = DVector::zeros(model.nv());
        p[i] = 1.0;
        pinned.push(response_map(&p));
    }
    let torque_bounds = &rows.b_tau - &rows.a_tau * DVector::from_column_slice(tau);
    for r in 0..rows.a_tau.nrows() {
        let mut p = DVector::zeros(model.nv());
        p.rows_mut(nb, nj).copy_from(&(-rows.a_tau.row(r).transpose()));
        cones.push((response_map(&p), torque_bounds[r]));
    }
    let cone_bounds = &rows.b_lambda - &rows.a_lambda * DVector::from_column_slice(lambda);
    for r in 0..rows.a_lambda.nrows() {
        let map = DMatrix::from_fn(3, n, |c, u| match u {
            0 => 0.0,
            u if (u - 1) % 3 == c => rows.a_lambda[(r, (u - 1) / 3)],
            _ => 0.0,
        });
        cones.push((map, cone_bounds[r]));
    }
    let (active, free): (Vec<_>, Vec<_>) = cones.into_iter().partition(|(_, t)| *t < ACTIVE_SLACK);
    pinned.extend(active.into_iter().map(|(m, _)| m));

    let basis = null_space(&pinned, n);
    let radius = basis.row(0).transpose();
    let done = |z: &DVector<f64>, status: SolveStatus, diagnostic: Option<String>| {
        let w = &basis * z;
        SufEvaluation {
            rho: w[0].max(0.0),
            k_lambda: DMatrix::from_row_slice(ns, 3, &w.as_slice()[1..]),
            status,
            min_torque_slack: torque,
            min_cone_slack: cone,
            diagnostic,
        }
    };
    let d = basis.ncols();
    if radius.amax() <= NULL_TOL {
        return done(&DVector::zeros(d), SolveStatus::Converged, None);
    }

    let mut problem = NlpProblem::new(vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d]);
    let (maps, bounds): (Vec<_>, Vec<_>) = free.into_iter().map(|(m, t)| (m * &basis, t)).unzip();
    if !maps.is_empty() {
        problem.add(SquaredConeBlock {
            name: "suf-cone[knot]".into(),
            maps,
            bounds,
            vars: (0..d).collect(),
        });
    }
    problem.add(LinearBlock {
        name: "radius-sign".into(),
        kind: BlockKind::Inequality,
        vars: (0..d).collect(),
        a: DMatrix::from_fn(1, d, |_, j| -radius[j]),
        b: DVector::zeros(1),
    });
    problem.add(QuadraticObjective {
        name: "radius".into(),
        vars: (0..d).collect(),
        weights: vec![0.0; d],
        linear: radius.iter().map(|r| -r).collect(),
    });

    let (z, report) = solve(&problem, &vec![0.0; d], &knot_solve_options());
    if report.violation > 1e-7 {
        let diagnostic = format!(
            "subproblem stopped with status {} at violation {:.3e}",
            report.status, report.violation
        );
        return done(&DVector::zeros(d), report.status, Some(diagnostic));
    }
    let diagnostic = (report.status != SolveStatus::Converged)
        .then(|| format!("subproblem stopped with status {}; radius is a feasible lower bound", report.status));
    done(&DVector::from_vec(z), report.status, diagnostic)
}

/// Orthonormal basis of `{w : L w = 0 for every L}`.
fn null_space(maps: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let m: usize = maps.iter().map(|l| l.nrows()).sum();
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to at least n rows so the decomposition returns all of V
    let mut stacked = DMatrix::zeros(m.max(n), n);
    let mut r = 0;
    for l in maps {
        stacked.rows_mut(r, l.nrows()).copy_from(l);
        r += l.nrows();
    }
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let top = svd.singular_values.max().max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= NULL_TOL * top).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| v_t[(keep[j], i)])
}

/// Evaluates every interval's starting knot of a trajectory.
pub fn evaluate_trajectory(scenario: &Scenario, traj: &Trajectory) -> Vec<SufEvaluation> {
    let contacts = scenario.contacts();
    (0..traj.intervals())
        .map(|k| evaluate_suf_at_knot(&scenario.model, &contacts, &traj.q[k], &traj.v[k], &traj.tau[k], &traj.lambda[k]))
        .collect()
}
