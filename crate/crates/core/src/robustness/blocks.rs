//! NLP blocks of the robustness constraints of one interval.
//!
//! The base-wrench and torque blocks read `[q, inputs, ρ, K̄λ]`, where
//! `inputs` are the torques of the torque block and `K̄λ` is stored
//! row-major (`n_s × 3`).
//! Both blocks depend on the stacked response `R = G(q) W` with
//! `G = [J_sᵀ | J_eᵀ]` and `W = [K̄λ; ρ I₃]`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};

use super::{smooth_norm, smooth_norm_hessian};
use crate::dynamics::contact_jacobians;
use crate::model::Model;
use crate::nlp::{BlockKind, ConstraintBlock};

const JACOBIAN_STEP: f64 = 6e-6;
const HESSIAN_STEP: f64 = 2e-5;

/// `[J_sᵀ | J_eᵀ]` at `q`, `n_v × (n_s + 3)`.
pub fn wrench_map(model: &Model, q: &[f64]) -> DMatrix<f64> {
    let jac = contact_jacobians(model, q);
    let (ns, nv) = (model.ns(), model.nv());
    let mut g = DMatrix::zeros(nv, ns + 3);
    g.columns_mut(0, ns).copy_from(&jac.support.transpose());
    g.columns_mut(ns, 3).copy_from(&jac.end_effector.transpose());
    g
}

#[derive(Clone)]
pub(crate) struct ResponseVars {
    pub model: Arc<Model>,
    pub ns: usize,
    pub inputs: usize,
}

impl ResponseVars {
    fn nq(&self) -> usize {
        self.model.nq()
    }

    fn rho_index(&self) -> usize {
        self.nq() + self.inputs
    }

    pub fn len(&self) -> usize {
        self.rho_index() + 1 + 3 * self.ns
    }

    fn inputs<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.nq()..self.rho_index()]
    }

    fn map(&self, x: &[f64]) -> DMatrix<f64> {
        wrench_map(&self.model, &x[..self.nq()])
    }

    fn gains(&self, x: &[f64]) -> DMatrix<f64> {
        let r = self.rho_index();
        let mut w = DMatrix::zeros(self.ns + 3, 3);
        for a in 0..self.ns {
            for c in 0..3 {
                w[(a, c)] = x[r + 1 + 3 * a + c];
            }
        }
        for c in 0..3 {
            w[(self.ns + c, c)] = x[r];
        }
        w
    }

    /// `∂G/∂q_l` by central differences.
    fn map_derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let model = &*self.model;
        let mut q = x[..model.nq()].to_vec();
        (0..q.len())
            .map(|l| {
                let step = JACOBIAN_STEP * (1.0 + q[l].abs());
                let orig = q[l];
                q[l] = orig + step;
                let gp = wrench_map(model, &q);
                q[l] = orig - step;
                let gm = wrench_map(model, &q);
                q[l] = orig;
                (gp - gm) / (2.0 * step)
            })
            .collect()
    }

    /// `∂R/∂x_u` for every local variable.
    fn response_derivatives(&self, g: &DMatrix<f64>, dg: &[DMatrix<f64>], w: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let nv = g.nrows();
        let mut d: Vec<DMatrix<f64>> = dg.iter().map(|gl| gl * w).collect();
        d.extend((0..self.inputs).map(|_| DMatrix::zeros(nv, 3)));
        d.push(g.columns(self.ns, 3).into_owned());
        for a in 0..self.ns {
            for c in 0..3 {
                let mut m = DMatrix::zeros(nv, 3);
                m.set_column(c, &g.column(a));
                d.push(m);
            }
        }
        d
    }

    /// Hessian of `L(R(x))` given `∂L/∂R` and, for the rows `X = P R`,
    /// the curvature `∂²L/∂Xᵣ²` of each row.
    fn curvature(
        &self,
        x: &[f64],
        grad_r: &DMatrix<f64>,
        p: &DMatrix<f64>,
        row_curvature: &[Matrix3<f64>],
    ) -> DMatrix<f64> {
        let n = x.len();
        let g = self.map(x);
        let dg = self.map_derivatives(x);
        let w = self.gains(x);
        let d = self.response_derivatives(&g, &dg, &w);
        let mut hess = DMatrix::zeros(n, n);

        for (r, hr) in row_curvature.iter().enumerate() {
            if hr.amax() == 0.0 {
                continue;
            }
            let pr = p.row(r);
            let dx: Vec<RowVector3<f64>> = d.iter().map(|du| RowVector3::from_iterator((&pr * du).iter().copied())).collect();
            for u in 0..n {
                if dx[u].amax() == 0.0 {
                    continue;
                }
                let hu = dx[u] * hr;
                for v in u..n {
                    hess[(u, v)] += hu.dot(&dx[v]);
                }
            }
        }

        let ns = self.ns;
        let nq = dg.len();
        let rho = self.rho_index();
        for (l, gl) in dg.iter().enumerate() {
            let m = gl.tr_mul(grad_r);
            hess[(l, rho)] += (0..3).map(|c| m[(ns + c, c)]).sum::<f64>();
            for a in 0..ns {
                for c in 0..3 {
                    hess[(l, rho + 1 + 3 * a + c)] += m[(a, c)];
                }
            }
        }
        let weight = grad_r * w.transpose();
        let psi = |q: &[f64]| wrench_map(&self.model, q).dot(&weight);
        let q0 = &x[..nq];
        let steps: Vec<f64> = q0.iter().map(|v| HESSIAN_STEP * (1.0 + v.abs())).collect();
        let f0 = psi(q0);
        let mut q = q0.to_vec();
        let single: Vec<f64> = (0..nq)
            .map(|i| {
                q[i] += steps[i];
                let f = psi(&q);
                q[i] = q0[i];
                f
            })
            .collect();
        for i in 0..nq {
            q[i] += steps[i];
            for j in i..nq {
                q[j] += steps[j];
                hess[(i, j)] += (psi(&q) - single[i] - single[j] + f0) / (steps[i] * steps[j]);
                q[j] -= steps[j];
            }
            q[i] = q0[i];
        }
        for u in 0..n {
            for v in 0..u {
                hess[(u, v)] = hess[(v, u)];
            }
        }
        hess
    }
}

/// Floating-base rows of `J_sᵀ K̄λ + J_eᵀ ρ`, row-major `n_b × 3`.
pub struct BaseWrenchBlock {
    pub(crate) response: ResponseVars,
    pub(crate) n_base: usize,
    pub(crate) label: String,
    pub(crate) vars: Vec<usize>,
}

impl BaseWrenchBlock {
    pub fn new(model: Arc<Model>, n_base: usize, label: String, vars: Vec<usize>) -> Self {
        let ns = model.ns();
        let response = ResponseVars { model, ns, inputs: 0 };
        assert_eq!(vars.len(), response.len());
        BaseWrenchBlock {
            response,
            n_base,
            label,
            vars,
        }
    }
}

impl ConstraintBlock for BaseWrenchBlock {
    fn name(&self) -> String {
        format!("suf-base[{}]", self.label)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        3 * self.n_base
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let r = self.response.map(x) * self.response.gains(x);
        for i in 0..self.n_base {
            for c in 0..3 {
                out[3 * i + c] = r[(i, c)];
            }
        }
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let rv = &self.response;
        let d = rv.response_derivatives(&rv.map(x), &rv.map_derivatives(x), &rv.gains(x));
        DMatrix::from_fn(self.dim(), x.len(), |row, u| d[u][(row / 3, row % 3)])
    }
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let model = &*self.response.model;
        let grad_r = DMatrix::from_fn(model.nv(), 3, |i, c| if i < self.n_base { y[3 * i + c] } else { 0.0 });
        self.response.curvature(x, &grad_r, &DMatrix::zeros(0, model.nv()), &[])
    }
}

/// `a_τᵀ τ + ‖a_τᵀ K̄τ‖ − b_τ` with `K̄τ` eliminated through the actuated rows.
pub struct TorqueSufBlock {
    pub(crate) response: ResponseVars,
    /// `−A_τ` spread over the actuated rows of the response.
    pub(crate) rows: DMatrix<f64>,
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DVector<f64>,
    pub(crate) label: String,
    pub(crate) vars: Vec<usize>,
}

impl TorqueSufBlock {
    pub fn new(model: Arc<Model>, n_base: usize, a: DMatrix<f64>, b: DVector<f64>, label: String, vars: Vec<usize>) -> Self {
        let (nj, ns) = (a.ncols(), model.ns());
        let response = ResponseVars { model, ns, inputs: nj };
        assert_eq!(vars.len(), response.len());
        let mut rows = DMatrix::zeros(a.nrows(), n_base + nj);
        rows.columns_mut(n_base, nj).copy_from(&(-&a));
        TorqueSufBlock {
            response,
            rows,
            a,
            b,
            label,
            vars,
        }
    }

    fn rows_of(&self, r: &DMatrix<f64>) -> Vec<Vector3<f64>> {
        let x = &self.rows * r;
        (0..x.nrows()).map(|i| Vector3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])).collect()
    }
}

impl ConstraintBlock for TorqueSufBlock {
    fn name(&self) -> String {
        format!("suf-torque[{}]", self.label)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Inequality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let rv = &self.response;
        let tau = DVector::from_column_slice(rv.inputs(x));
        let lin = &self.a * tau - &self.b;
        for (r, xr) in self.rows_of(&(rv.map(x) * rv.gains(x))).iter().enumerate() {
            out[r] = lin[r] + smooth_norm(xr);
        }
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let rv = &self.response;
        let (g, w) = (rv.map(x), rv.gains(x));
        let d = rv.response_derivatives(&g, &rv.map_derivatives(x), &w);
        let xr = self.rows_of(&(&g * &w));
        let mut jac = DMatrix::zeros(self.dim(), x.len());
        let t0 = rv.nq();
        for (r, xr) in xr.iter().enumerate() {
            let unit = xr / smooth_norm(xr);
            let pr = self.rows.row(r);
            for (u, du) in d.iter().enumerate() {
                let dx = &pr * du;
                jac[(r, u)] = dx[0] * unit[0] + dx[1] * unit[1] + dx[2] * unit[2];
            }
            for j in 0..self.a.ncols() {
                jac[(r, t0 + j)] += self.a[(r, j)];
            }
        }
        jac
    }
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let rv = &self.response;
        let r = rv.map(x) * rv.gains(x);
        let xr = self.rows_of(&r);
        let mut grad_x = DMatrix::zeros(xr.len(), 3);
        let mut curv = Vec::with_capacity(xr.len());
        for (i, v) in xr.iter().enumerate() {
            grad_x.row_mut(i).copy_from(&(v.transpose() * (y[i] / smooth_norm(v))));
            curv.push(smooth_norm_hessian(v) * y[i]);
        }
        let grad_r = self.rows.tr_mul(&grad_x);
        rv.curvature(x, &grad_r, &self.rows, &curv)
    }
}

/// `a_λᵀ λ + ‖a_λᵀ K̄λ‖ − b_λ` over the local variables `(λ, K̄λ)`.
pub struct ContactSufBlock {
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DVector<f64>,
    pub(crate) label: String,
    pub(crate) vars: Vec<usize>,
}

impl ContactSufBlock {
    fn split(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let ns = self.a.ncols();
        let lambda = DVector::from_column_slice(&x[..ns]);
        let k = DMatrix::from_row_slice(ns, 3, &x[ns..]);
        (lambda, k)
    }

    fn rows_of(&self, k: &DMatrix<f64>) -> Vec<Vector3<f64>> {
        let x = &self.a * k;
        (0..x.nrows()).map(|i| Vector3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])).collect()
    }
}

impl ConstraintBlock for ContactSufBlock {
    fn name(&self) -> String {
        format!("suf-contact[{}]", self.label)
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Inequality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (lambda, k) = self.split(x);
        let lin = &self.a * lambda - &self.b;
        for (r, xr) in self.rows_of(&k).iter().enumerate() {
            out[r] = lin[r] + smooth_norm(xr);
        }
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let ns = self.a.ncols();
        let (_, k) = self.split(x);
        let mut jac = DMatrix::zeros(self.dim(), x.len());
        jac.columns_mut(0, ns).copy_from(&self.a);
        for (r, xr) in self.rows_of(&k).iter().enumerate() {
            let unit = xr / smooth_norm(xr);
            for a in 0..ns {
                for c in 0..3 {
                    jac[(r, ns + 3 * a + c)] = self.a[(r, a)] * unit[c];
                }
            }
        }
        jac
    }
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let ns = self.a.ncols();
        let (_, k) = self.split(x);
        let mut hess = DMatrix::zeros(x.len(), x.len());
        for (r, xr) in self.rows_of(&k).iter().enumerate() {
            let h = smooth_norm_hessian(xr) * y[r];
            for a in (0..ns).filter(|&a| self.a[(r, a)] != 0.0) {
                for b in (0..ns).filter(|&b| self.a[(r, b)] != 0.0) {
                    let s = self.a[(r, a)] * self.a[(r, b)];
                    for c in 0..3 {
                        for d in 0..3 {
                            hess[(ns + 3 * a + c, ns + 3 * b + d)] += s * h[(c, d)];
                        }
                    }
                }
            }
        }
        hess
    }
}

/// Cone rows with a fixed right-hand side in squared form,
/// `(|L_r w|² + ε² − t_r²) / (2 max(t_r, t_min))`, over linear maps of the
/// local variables. Equivalent to `smooth_norm(L_r w) ≤ t_r` for `t_r ≥ ε`
/// with constant curvature.
pub struct SquaredConeBlock {
    pub(crate) name: String,
    /// One `3 × n` map per row.
    pub(crate) maps: Vec<DMatrix<f64>>,
    pub(crate) bounds: Vec<f64>,
    pub(crate) vars: Vec<usize>,
}

const SQUARED_SCALE_FLOOR: f64 = 1e-3;

impl SquaredConeBlock {
    fn scale(&self, r: usize) -> f64 {
        0.5 / self.bounds[r].max(SQUARED_SCALE_FLOOR)
    }
}

impl ConstraintBlock for SquaredConeBlock {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Inequality
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.maps.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let w = DVector::from_column_slice(x);
        let eps2 = super::NORM_SMOOTHING * super::NORM_SMOOTHING;
        for (r, l) in self.maps.iter().enumerate() {
            let t = self.bounds[r];
            out[r] = ((l * &w).norm_squared() + eps2 - t * t) * self.scale(r);
        }
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let w = DVector::from_column_slice(x);
        let mut jac = DMatrix::zeros(self.dim(), x.len());
        for (r, l) in self.maps.iter().enumerate() {
            let g = l.tr_mul(&(l * &w)) * (2.0 * self.scale(r));
            jac.row_mut(r).copy_from(&g.transpose());
        }
        jac
    }
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let mut hess = DMatrix::zeros(x.len(), x.len());
        for (r, l) in self.maps.iter().enumerate() {
            if y[r] != 0.0 {
                hess += l.tr_mul(l) * (2.0 * self.scale(r) * y[r]);
            }
        }
        hess
    }
}
