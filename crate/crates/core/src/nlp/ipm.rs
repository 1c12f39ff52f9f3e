//! Primal-dual interior-point method.
//!
//! Inequalities become `c_I(x) + s = 0` with `s ≥ 0`; bounds and slacks
//! carry logarithmic barriers. Each iteration solves the reduced KKT system
//!
//! ```text
//! [ W + Σ_x + J_Iᵀ Σ_s J_I + δ_w I    J_Eᵀ  ] [dx ]
//! [ J_E                              −δ_c I ] [dy_E]
//! ```
//!
//! with a profile LDLᵀ factorization whose pivot signs give the inertia.
//! Trial points are accepted by a filter on (infeasibility, barrier value).
//! When the step size collapses, a regularized Gauss-Newton phase reduces
//! the infeasibility before the optimality iteration resumes.

use std::time::Instant;

use nalgebra::DMatrix;

use super::ldl::{ProfileLdl, SymmetricPattern};
use super::{BlockKind, NlpProblem, SolveOptions, SolveReport, SolveStatus};

const KAPPA_EPS: f64 = 10.0;
const MU_FACTOR: f64 = 0.2;
const MU_MIN: f64 = 1e-11;
const TAU: f64 = 0.995;
const DELTA_C: f64 = 1e-8;
const DELTA_C_RATIO: f64 = 1e-4;
const DELTA_C_MAX: f64 = 1e-2;
const DELTA_W_FIRST: f64 = 1e-8;
const DELTA_W_MAX: f64 = 1e40;
const S_MAX: f64 = 100.0;
const KAPPA_SIGMA: f64 = 1e10;
const ROW_SCALE_MAX: f64 = 100.0;

// filter line search
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const ETA_PHI: f64 = 1e-8;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const KAPPA_SOC: f64 = 0.99;
const MAX_SOC: usize = 4;
const KAPPA_RESTO: f64 = 0.9;
const THETA_MAX_FACTOR: f64 = 10.0;

struct Layout {
    free: Vec<usize>,
    /// For each block, local variable → free index.
    local_free: Vec<Vec<Option<usize>>>,
    /// For each block, first row in its family (equality or inequality).
    row_offset: Vec<usize>,
    m_e: usize,
    m_i: usize,
    scale_e: Vec<f64>,
    scale_i: Vec<f64>,
}

impl Layout {
    fn new(problem: &NlpProblem) -> Self {
        let n = problem.n();
        let mut free_index = vec![None; n];
        let mut free = Vec::new();
        for i in 0..n {
            if problem.lower[i] < problem.upper[i] {
                free_index[i] = Some(free.len());
                free.push(i);
            }
        }
        let mut m_e = 0;
        let mut m_i = 0;
        let mut row_offset = Vec::with_capacity(problem.blocks.len());
        let mut local_free = Vec::with_capacity(problem.blocks.len());
        for b in &problem.blocks {
            local_free.push(b.vars().iter().map(|&v| free_index[v]).collect());
            match b.kind() {
                BlockKind::Equality => {
                    row_offset.push(m_e);
                    m_e += b.dim();
                }
                BlockKind::Inequality => {
                    row_offset.push(m_i);
                    m_i += b.dim();
                }
                BlockKind::Objective => row_offset.push(0),
            }
        }
        Layout {
            free,
            local_free,
            row_offset,
            m_e,
            m_i,
            scale_e: vec![1.0; m_e],
            scale_i: vec![1.0; m_i],
        }
    }

    fn scales(&self, kind: BlockKind, block: usize, dim: usize) -> &[f64] {
        let off = self.row_offset[block];
        match kind {
            BlockKind::Equality => &self.scale_e[off..off + dim],
            BlockKind::Inequality => &self.scale_i[off..off + dim],
            BlockKind::Objective => &[],
        }
    }

    /// Shrinks every constraint row whose gradient exceeds `ROW_SCALE_MAX`.
    fn set_row_scales(&mut self, problem: &NlpProblem, point: &Point) {
        for (k, b) in problem.blocks.iter().enumerate() {
            let kind = b.kind();
            if kind == BlockKind::Objective {
                continue;
            }
            let off = self.row_offset[k];
            for r in 0..b.dim() {
                let mut norm = 0.0f64;
                for (l, fl) in self.local_free[k].iter().enumerate() {
                    if fl.is_some() {
                        norm = norm.max(point.jac[k][(r, l)].abs());
                    }
                }
                let scale = if norm > ROW_SCALE_MAX { ROW_SCALE_MAX / norm } else { 1.0 };
                match kind {
                    BlockKind::Equality => self.scale_e[off + r] = scale,
                    _ => self.scale_i[off + r] = scale,
                }
            }
        }
    }
}

/// Function values (and optionally Jacobians) at one point. Constraint
/// values and Jacobian rows carry the row scaling.
struct Point {
    f: f64,
    grad: Vec<f64>,
    c_e: Vec<f64>,
    c_i: Vec<f64>,
    jac: Vec<DMatrix<f64>>,
}

fn evaluate(problem: &NlpProblem, layout: &Layout, x: &[f64], derivatives: bool) -> Result<Point, String> {
    let nf = layout.free.len();
    let mut p = Point {
        f: 0.0,
        grad: vec![0.0; if derivatives { nf } else { 0 }],
        c_e: vec![0.0; layout.m_e],
        c_i: vec![0.0; layout.m_i],
        jac: Vec::new(),
    };
    for (k, b) in problem.blocks.iter().enumerate() {
        let xl = problem.local(b.as_ref(), x);
        let mut out = vec![0.0; b.dim()];
        b.eval(&xl, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(b.name());
        }
        let kind = b.kind();
        let scales = layout.scales(kind, k, b.dim());
        let off = layout.row_offset[k];
        match kind {
            BlockKind::Objective => p.f += out[0],
            BlockKind::Equality => {
                for (r, v) in out.iter().enumerate() {
                    p.c_e[off + r] = v * scales[r];
                }
            }
            BlockKind::Inequality => {
                for (r, v) in out.iter().enumerate() {
                    p.c_i[off + r] = v * scales[r];
                }
            }
        }
        if derivatives {
            let mut j = b.jacobian(&xl);
            if j.iter().any(|v| !v.is_finite()) {
                return Err(b.name());
            }
            if kind == BlockKind::Objective {
                for (l, fi) in layout.local_free[k].iter().enumerate() {
                    if let Some(fi) = fi {
                        p.grad[*fi] += j[(0, l)];
                    }
                }
            } else {
                for (r, s) in scales.iter().enumerate() {
                    if *s != 1.0 {
                        j.row_mut(r).scale_mut(*s);
                    }
                }
            }
            p.jac.push(j);
        }
    }
    Ok(p)
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    y_e: Vec<f64>,
    y_i: Vec<f64>,
    z_l: Vec<f64>,
    z_u: Vec<f64>,
}

enum Restoration {
    Recovered,
    Infeasible,
    OutOfIterations,
    Failed(Option<String>),
}

struct Solver<'a> {
    problem: &'a NlpProblem,
    layout: Layout,
    opts: SolveOptions,
    lower: Vec<f64>,
    upper: Vec<f64>,
    sigma: f64,
    kkt: ProfileLdl,
    delta_w_last: f64,
    mu_min: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Solver<'a> {
    fn new(problem: &'a NlpProblem, opts: SolveOptions) -> Self {
        let layout = Layout::new(problem);
        let nf = layout.free.len();
        let lower: Vec<f64> = layout.free.iter().map(|&i| problem.lower[i]).collect();
        let upper: Vec<f64> = layout.free.iter().map(|&i| problem.upper[i]).collect();

        let n_nodes = nf + layout.m_e;
        let mut pattern = SymmetricPattern::new(n_nodes);
        let mut coupling = SymmetricPattern::new(nf);
        for (k, b) in problem.blocks.iter().enumerate() {
            let vars: Vec<usize> = layout.local_free[k].iter().flatten().copied().collect();
            coupling.add_clique(&vars);
            match b.kind() {
                BlockKind::Equality => {
                    if !b.is_linear() {
                        pattern.add_clique(&vars);
                    }
                    for r in 0..b.dim() {
                        let row = nf + layout.row_offset[k] + r;
                        for &v in &vars {
                            pattern.add_edge(row, v);
                        }
                    }
                }
                _ => pattern.add_clique(&vars),
            }
        }
        pattern.finalize();
        coupling.finalize();

        // order variables by RCM and eliminate each equality row just before
        // the first of its variables, so that the row pivots condense to
        // H + J_Eᵀ J_E / δ_c
        let var_order = coupling.rcm_order();
        let mut var_pos = vec![0; nf];
        for (k, &v) in var_order.iter().enumerate() {
            var_pos[v] = k;
        }
        let mut before: Vec<Vec<usize>> = vec![Vec::new(); nf + 1];
        for row in 0..layout.m_e {
            let node = nf + row;
            let first = pattern.neighbors(node).iter().filter(|&&m| m < nf).map(|&m| var_pos[m]).min().unwrap_or(nf);
            before[first].push(node);
        }
        let mut order = Vec::with_capacity(n_nodes);
        for (k, &v) in var_order.iter().enumerate() {
            order.extend(before[k].iter().copied());
            order.push(v);
        }
        order.extend(before[nf].iter().copied());
        let kkt = ProfileLdl::new(&pattern, order);
        log::debug!("kkt: {} nodes, envelope {} entries", n_nodes, kkt.storage());

        let mu_min = (opts.tol_feas.min(opts.tol_opt) / 10.0).min(MU_MIN);
        Solver {
            problem,
            layout,
            opts,
            lower,
            upper,
            sigma: 1.0,
            kkt,
            delta_w_last: 0.0,
            mu_min,
            filter: Vec::new(),
            theta_max: f64::INFINITY,
            theta_min: 0.0,
        }
    }

    fn nf(&self) -> usize {
        self.layout.free.len()
    }

    fn full_x(&self, template: &[f64], xf: &[f64]) -> Vec<f64> {
        let mut x = template.to_vec();
        for (k, &i) in self.layout.free.iter().enumerate() {
            x[i] = xf[k];
        }
        x
    }

    /// `Jᵀ y` for one constraint family.
    fn jt_mul(&self, point: &Point, kind: BlockKind, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nf()];
        for (k, b) in self.problem.blocks.iter().enumerate() {
            if b.kind() != kind {
                continue;
            }
            let off = self.layout.row_offset[k];
            let j = &point.jac[k];
            for (l, fi) in self.layout.local_free[k].iter().enumerate() {
                if let Some(fi) = fi {
                    let mut acc = 0.0;
                    for r in 0..b.dim() {
                        acc += j[(r, l)] * y[off + r];
                    }
                    out[*fi] += acc;
                }
            }
        }
        out
    }

    fn j_mul(&self, point: &Point, kind: BlockKind, dx: &[f64]) -> Vec<f64> {
        let m = if kind == BlockKind::Equality { self.layout.m_e } else { self.layout.m_i };
        let mut out = vec![0.0; m];
        for (k, b) in self.problem.blocks.iter().enumerate() {
            if b.kind() != kind {
                continue;
            }
            let off = self.layout.row_offset[k];
            let j = &point.jac[k];
            for (l, fi) in self.layout.local_free[k].iter().enumerate() {
                if let Some(fi) = fi {
                    let d = dx[*fi];
                    if d != 0.0 {
                        for r in 0..b.dim() {
                            out[off + r] += j[(r, l)] * d;
                        }
                    }
                }
            }
        }
        out
    }

    fn has_l(&self, i: usize) -> bool {
        self.lower[i].is_finite()
    }

    fn has_u(&self, i: usize) -> bool {
        self.upper[i].is_finite()
    }

    fn barrier_value(&self, f: f64, xf: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut v = self.sigma * f;
        for i in 0..xf.len() {
            if self.has_l(i) {
                v -= mu * (xf[i] - self.lower[i]).ln();
            }
            if self.has_u(i) {
                v -= mu * (self.upper[i] - xf[i]).ln();
            }
        }
        for si in s {
            v -= mu * si.ln();
        }
        v
    }

    /// Directional derivative of the barrier function along `(dx, ds)`.
    fn barrier_slope(&self, point: &Point, it: &Iterate, mu: f64, dx: &[f64], ds: &[f64]) -> f64 {
        let mut slope = 0.0;
        for i in 0..self.nf() {
            let mut g = self.sigma * point.grad[i];
            if self.has_l(i) {
                g -= mu / (it.x[i] - self.lower[i]);
            }
            if self.has_u(i) {
                g += mu / (self.upper[i] - it.x[i]);
            }
            slope += g * dx[i];
        }
        for r in 0..self.layout.m_i {
            slope -= mu / it.s[r] * ds[r];
        }
        slope
    }

    /// Scaled ℓ1 infeasibility.
    fn theta(point: &Point, s: &[f64]) -> f64 {
        point.c_e.iter().map(|c| c.abs()).sum::<f64>() + point.c_i.iter().zip(s).map(|(c, s)| (c + s).abs()).sum::<f64>()
    }

    fn filter_accepts(&self, theta: f64, phi: f64) -> bool {
        theta <= self.theta_max && self.filter.iter().all(|&(t, f)| theta < t || phi < f)
    }

    fn augment_filter(&mut self, theta: f64, phi: f64) {
        let entry = ((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
        self.filter.retain(|&(t, f)| t < entry.0 || f < entry.1);
        self.filter.push(entry);
    }

    fn scaling_sd(&self, it: &Iterate) -> f64 {
        let m = self.layout.m_e + self.layout.m_i;
        let n = self.nf();
        let sum: f64 = it.y_e.iter().chain(&it.y_i).chain(&it.z_l).chain(&it.z_u).map(|v| v.abs()).sum();
        let count = (m + 2 * n).max(1) as f64;
        (sum / count).max(S_MAX) / S_MAX
    }

    /// Unscaled constraint and bound violation.
    fn violation(&self, point: &Point, xf: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for (c, s) in point.c_e.iter().zip(&self.layout.scale_e) {
            v = v.max(c.abs() / s);
        }
        for (c, s) in point.c_i.iter().zip(&self.layout.scale_i) {
            v = v.max(c / s);
        }
        for i in 0..xf.len() {
            v = v.max(self.lower[i] - xf[i]).max(xf[i] - self.upper[i]);
        }
        v
    }

    /// Projected-gradient stationarity plus inequality complementarity.
    fn stationarity(&self, point: &Point, it: &Iterate) -> f64 {
        let ge = self.jt_mul(point, BlockKind::Equality, &it.y_e);
        let gi = self.jt_mul(point, BlockKind::Inequality, &it.y_i);
        let mut worst = 0.0f64;
        for i in 0..self.nf() {
            let g = self.sigma * point.grad[i] + ge[i] + gi[i];
            let x = it.x[i];
            let projected = (x - g).clamp(self.lower[i], self.upper[i]);
            worst = worst.max((x - projected).abs());
        }
        worst /= self.scaling_sd(it);
        for (c, y) in point.c_i.iter().zip(&it.y_i) {
            worst = worst.max((c * y).abs()).max(-y);
        }
        worst
    }

    /// Barrier-subproblem optimality error.
    fn barrier_error(&self, point: &Point, it: &Iterate, mu: f64) -> f64 {
        let ge = self.jt_mul(point, BlockKind::Equality, &it.y_e);
        let gi = self.jt_mul(point, BlockKind::Inequality, &it.y_i);
        let mut dual = 0.0f64;
        let mut compl = 0.0f64;
        for i in 0..self.nf() {
            let r = self.sigma * point.grad[i] + ge[i] + gi[i] - it.z_l[i] + it.z_u[i];
            dual = dual.max(r.abs());
            if self.has_l(i) {
                compl = compl.max(((it.x[i] - self.lower[i]) * it.z_l[i] - mu).abs());
            }
            if self.has_u(i) {
                compl = compl.max(((self.upper[i] - it.x[i]) * it.z_u[i] - mu).abs());
            }
        }
        for (s, y) in it.s.iter().zip(&it.y_i) {
            compl = compl.max((s * y - mu).abs());
        }
        let sd = self.scaling_sd(it);
        let mut primal = max_abs(&point.c_e);
        for (c, s) in point.c_i.iter().zip(&it.s) {
            primal = primal.max((c + s).abs());
        }
        (dual / sd).max(primal).max(compl / sd)
    }

    fn add_local(&mut self, lf: &[Option<usize>], m: &DMatrix<f64>) {
        for (a, fa) in lf.iter().enumerate() {
            let Some(fa) = fa else { continue };
            for (c, fc) in lf.iter().enumerate().take(a + 1) {
                let Some(fc) = fc else { continue };
                if fa == fc && a != c {
                    self.kkt.add(*fa, *fc, 2.0 * m[(a, c)]);
                } else {
                    self.kkt.add(*fa, *fc, m[(a, c)]);
                }
            }
        }
    }

    /// Assembles the KKT matrix (without `δ_w`) into `self.kkt`. The
    /// Lagrangian Hessian is included when multipliers are given.
    fn assemble(
        &mut self,
        point: &Point,
        x_full: &[f64],
        diag: &[f64],
        delta_c: f64,
        multipliers: Option<(&[f64], &[f64])>,
        ineq_weights: &[f64],
    ) {
        let nf = self.nf();
        let problem = self.problem;
        self.kkt.clear();
        for (i, d) in diag.iter().enumerate() {
            self.kkt.add(i, i, *d);
        }
        for row in 0..self.layout.m_e {
            self.kkt.add(nf + row, nf + row, -delta_c);
        }
        for (k, b) in problem.blocks.iter().enumerate() {
            let lf = self.layout.local_free[k].clone();
            let off = self.layout.row_offset[k];
            let jac = &point.jac[k];
            if let Some((y_e, y_i)) = multipliers {
                let weights: Vec<f64> = match b.kind() {
                    BlockKind::Objective => vec![self.sigma],
                    BlockKind::Equality => (0..b.dim()).map(|r| y_e[off + r] * self.layout.scale_e[off + r]).collect(),
                    BlockKind::Inequality => (0..b.dim()).map(|r| y_i[off + r] * self.layout.scale_i[off + r]).collect(),
                };
                if !b.is_linear() && weights.iter().any(|w| *w != 0.0) {
                    let xl = problem.local(b.as_ref(), x_full);
                    let h = b.hessian(&xl, &weights);
                    self.add_local(&lf, &h);
                }
            }
            match b.kind() {
                BlockKind::Equality => {
                    for (l, fl) in lf.iter().enumerate() {
                        let Some(fl) = fl else { continue };
                        for r in 0..b.dim() {
                            let v = jac[(r, l)];
                            if v != 0.0 {
                                self.kkt.add(nf + off + r, *fl, v);
                            }
                        }
                    }
                }
                BlockKind::Inequality => {
                    let mut weighted = jac.clone();
                    for r in 0..b.dim() {
                        weighted.row_mut(r).scale_mut(ineq_weights[off + r]);
                    }
                    let prod = jac.tr_mul(&weighted);
                    self.add_local(&lf, &prod);
                }
                BlockKind::Objective => {}
            }
        }
    }

    /// Factorizes with increasing `δ_w` until the inertia is `(n, m_e, 0)`.
    /// Returns the regularization used, or `None` when it cannot be found.
    fn factor_with_inertia(&mut self) -> Option<f64> {
        let nf = self.nf();
        let m_e = self.layout.m_e;
        let mut delta = 0.0;
        let mut attempts = 0;
        loop {
            for i in 0..nf {
                self.kkt.add(i, i, delta);
            }
            let inertia = self.kkt.factor(1e-300);
            if inertia.positive == nf && inertia.negative == m_e && inertia.zero == 0 {
                if delta > 0.0 {
                    self.delta_w_last = delta;
                }
                return Some(delta);
            }
            for i in 0..nf {
                self.kkt.add(i, i, -delta);
            }
            log::trace!("inertia delta {delta:.1e}: +{} -{} 0{} (want {nf}, {m_e})", inertia.positive, inertia.negative, inertia.zero);
            attempts += 1;
            delta = if delta == 0.0 {
                if self.delta_w_last == 0.0 {
                    DELTA_W_FIRST
                } else {
                    (self.delta_w_last / 3.0).max(DELTA_W_FIRST)
                }
            } else {
                delta * 10.0
            };
            if delta > DELTA_W_MAX || attempts > 60 {
                return None;
            }
        }
    }

    /// Newton direction for given constraint residuals `r_e` (equalities)
    /// and `r_i` (inequalities with slacks).
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        point: &Point,
        it: &Iterate,
        mu: f64,
        sigma_s: &[f64],
        r_e: &[f64],
        r_i: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let nf = self.nf();
        let m_e = self.layout.m_e;
        let ge = self.jt_mul(point, BlockKind::Equality, &it.y_e);
        let corr: Vec<f64> = (0..self.layout.m_i).map(|r| sigma_s[r] * r_i[r] + mu / it.s[r]).collect();
        let gi = self.jt_mul(point, BlockKind::Inequality, &corr);
        let mut rhs = vec![0.0; nf + m_e];
        for i in 0..nf {
            let mut g = self.sigma * point.grad[i] + ge[i] + gi[i];
            if self.has_l(i) {
                g -= mu / (it.x[i] - self.lower[i]);
            }
            if self.has_u(i) {
                g += mu / (self.upper[i] - it.x[i]);
            }
            rhs[i] = -g;
        }
        for r in 0..m_e {
            rhs[nf + r] = -r_e[r];
        }
        let sol = self.kkt.solve_refined(&rhs, 2);
        let dx = sol[..nf].to_vec();
        let dy_e = sol[nf..].to_vec();
        let jdx = self.j_mul(point, BlockKind::Inequality, &dx);
        let ds: Vec<f64> = (0..self.layout.m_i).map(|r| -r_i[r] - jdx[r]).collect();
        let dy_i: Vec<f64> = (0..self.layout.m_i)
            .map(|r| sigma_s[r] * (jdx[r] + r_i[r]) + mu / it.s[r] - it.y_i[r])
            .collect();
        (dx, dy_e, ds, dy_i)
    }

    fn max_step(values: &[f64], steps: &[f64], lower: impl Fn(usize) -> Option<f64>) -> f64 {
        let mut alpha = 1.0f64;
        for i in 0..values.len() {
            if let Some(l) = lower(i) {
                if steps[i] < 0.0 {
                    let gap = values[i] - l;
                    alpha = alpha.min(-TAU * gap / steps[i]);
                }
            }
        }
        alpha.max(0.0)
    }

    fn primal_step_limit(&self, it: &Iterate, dx: &[f64], ds: &[f64]) -> f64 {
        let a1 = Self::max_step(&it.x, dx, |i| self.has_l(i).then(|| self.lower[i]));
        let neg_x: Vec<f64> = it.x.iter().map(|v| -v).collect();
        let neg_dx: Vec<f64> = dx.iter().map(|v| -v).collect();
        let a2 = Self::max_step(&neg_x, &neg_dx, |i| self.has_u(i).then(|| -self.upper[i]));
        let a3 = Self::max_step(&it.s, ds, |_| Some(0.0));
        a1.min(a2).min(a3)
    }

    /// Trial point `(x + α dx, s + α ds)` with its values, or `None` when
    /// some block is not finite there.
    fn trial(&self, it: &Iterate, x_full: &[f64], alpha: f64, dx: &[f64], ds: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Point)> {
        let xt: Vec<f64> = it.x.iter().zip(dx).map(|(x, d)| x + alpha * d).collect();
        let st: Vec<f64> = it.s.iter().zip(ds).map(|(s, d)| s + alpha * d).collect();
        let full = self.full_x(x_full, &xt);
        let p = evaluate(self.problem, &self.layout, &full, false).ok()?;
        p.f.is_finite().then_some((xt, st, p))
    }

    fn central_multipliers(&self, it: &mut Iterate, mu: f64) {
        it.y_e.iter_mut().for_each(|y| *y = 0.0);
        for (y, s) in it.y_i.iter_mut().zip(&it.s) {
            *y = mu / s;
        }
        for i in 0..self.nf() {
            it.z_l[i] = if self.has_l(i) { mu / (it.x[i] - self.lower[i]) } else { 0.0 };
            it.z_u[i] = if self.has_u(i) { mu / (self.upper[i] - it.x[i]) } else { 0.0 };
        }
    }

    /// Minimizes `½‖c_E‖² + ½‖c_I + s‖²` plus a proximity term and barriers
    /// until the infeasibility has dropped enough for the filter to accept.
    fn restore(&mut self, it: &mut Iterate, x_full: &mut Vec<f64>, point: &mut Point, mu: f64, iterations: &mut usize) -> Restoration {
        let problem = self.problem;
        let nf = self.nf();
        let m_i = self.layout.m_i;
        let theta0 = Self::theta(point, &it.s);
        let r0: Vec<f64> = point.c_i.iter().zip(&it.s).map(|(c, s)| c + s).collect();
        let mut mu_r = mu.max(max_abs(&point.c_e)).max(max_abs(&r0));
        let x_ref = it.x.clone();
        let dr2: Vec<f64> = x_ref.iter().map(|x| 1.0 / x.abs().max(1.0).powi(2)).collect();
        let mut steps = 0;
        loop {
            let theta = Self::theta(point, &it.s);
            if steps > 0 && theta <= KAPPA_RESTO * theta0 {
                let phi = self.barrier_value(point.f, &it.x, &it.s, mu);
                if self.filter_accepts(theta, phi) {
                    log::debug!("restoration: theta {theta0:.2e} -> {theta:.2e} in {steps} steps");
                    return Restoration::Recovered;
                }
            }
            if *iterations >= self.opts.max_iter {
                return Restoration::OutOfIterations;
            }
            let zeta = mu_r.sqrt();
            let r_i: Vec<f64> = point.c_i.iter().zip(&it.s).map(|(c, s)| c + s).collect();
            let sig: Vec<f64> = it.s.iter().map(|s| mu_r / (s * s)).collect();
            let g_s: Vec<f64> = (0..m_i).map(|r| r_i[r] - mu_r / it.s[r]).collect();
            let je = self.jt_mul(point, BlockKind::Equality, &point.c_e);
            let jr = self.jt_mul(point, BlockKind::Inequality, &r_i);
            let mut diag = vec![0.0; nf];
            let mut g_rest = vec![0.0; nf];
            for i in 0..nf {
                diag[i] = zeta * dr2[i];
                g_rest[i] = jr[i] + zeta * dr2[i] * (it.x[i] - x_ref[i]);
                if self.has_l(i) {
                    let d = it.x[i] - self.lower[i];
                    diag[i] += mu_r / (d * d);
                    g_rest[i] -= mu_r / d;
                }
                if self.has_u(i) {
                    let d = self.upper[i] - it.x[i];
                    diag[i] += mu_r / (d * d);
                    g_rest[i] += mu_r / d;
                }
            }
            let err = (0..nf).map(|i| (g_rest[i] + je[i]).abs()).fold(max_abs(&g_s), f64::max);
            if err <= KAPPA_EPS * mu_r {
                if mu_r > self.mu_min {
                    mu_r = (mu_r * MU_FACTOR).max(self.mu_min);
                    continue;
                }
                log::debug!("restoration converged to an infeasible point, theta {theta:.2e}");
                return Restoration::Infeasible;
            }

            let weights: Vec<f64> = sig.iter().map(|g| g / (1.0 + g)).collect();
            self.assemble(point, x_full, &diag, 1.0, None, &weights);
            if self.factor_with_inertia().is_none() {
                return Restoration::Failed(None);
            }
            let t: Vec<f64> = (0..m_i).map(|r| g_s[r] / (1.0 + sig[r])).collect();
            let jt = self.jt_mul(point, BlockKind::Inequality, &t);
            let mut rhs = vec![0.0; nf + self.layout.m_e];
            for i in 0..nf {
                rhs[i] = -g_rest[i] + jt[i];
            }
            for (r, c) in point.c_e.iter().enumerate() {
                rhs[nf + r] = -c;
            }
            let sol = self.kkt.solve_refined(&rhs, 2);
            let dx = sol[..nf].to_vec();
            let jdx = self.j_mul(point, BlockKind::Inequality, &dx);
            let ds: Vec<f64> = (0..m_i).map(|r| -(g_s[r] + jdx[r]) / (1.0 + sig[r])).collect();
            let grad_x: Vec<f64> = (0..nf).map(|i| g_rest[i] + je[i]).collect();
            let slope = dot(&grad_x, &dx) + dot(&g_s, &ds);

            let psi = |solver: &Self, x: &[f64], s: &[f64], p: &Point| -> f64 {
                let mut v = 0.5 * dot(&p.c_e, &p.c_e);
                for (c, s) in p.c_i.iter().zip(s) {
                    v += 0.5 * (c + s) * (c + s) - mu_r * s.ln();
                }
                for i in 0..nf {
                    v += 0.5 * zeta * dr2[i] * (x[i] - x_ref[i]).powi(2);
                    if solver.has_l(i) {
                        v -= mu_r * (x[i] - solver.lower[i]).ln();
                    }
                    if solver.has_u(i) {
                        v -= mu_r * (solver.upper[i] - x[i]).ln();
                    }
                }
                v
            };
            let psi0 = psi(self, &it.x, &it.s, point);
            let mut alpha = self.primal_step_limit(it, &dx, &ds);
            let mut found = None;
            for _ in 0..50 {
                if let Some((xt, st, pt)) = self.trial(it, x_full, alpha, &dx, &ds) {
                    let v = psi(self, &xt, &st, &pt);
                    if v.is_finite() && v <= psi0 + 1e-4 * alpha * slope.min(0.0) {
                        found = Some((xt, st));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((xt, st)) = found else {
                if mu_r > self.mu_min {
                    mu_r = (mu_r * MU_FACTOR).max(self.mu_min);
                    continue;
                }
                return Restoration::Failed(None);
            };
            it.x = xt;
            it.s = st;
            *x_full = self.full_x(x_full, &it.x);
            *point = match evaluate(problem, &self.layout, x_full, true) {
                Ok(p) => p,
                Err(name) => return Restoration::Failed(Some(name)),
            };
            steps += 1;
            *iterations += 1;
        }
    }

    fn run(&mut self, x0: &[f64]) -> (Vec<f64>, SolveReport) {
        let start = Instant::now();
        let nf = self.nf();
        let problem = self.problem;
        let mut x_template: Vec<f64> = x0.iter().enumerate().map(|(i, v)| v.clamp(problem.lower[i], problem.upper[i])).collect();
        for i in 0..problem.n() {
            if problem.lower[i] >= problem.upper[i] {
                x_template[i] = problem.lower[i];
            }
        }
        // push free variables strictly inside their bounds
        let mut xf: Vec<f64> = self.layout.free.iter().map(|&i| x_template[i]).collect();
        for i in 0..nf {
            let (l, u) = (self.lower[i], self.upper[i]);
            let width = u - l;
            let pl = if l.is_finite() { (1e-2 * l.abs().max(1.0)).min(0.49 * width) } else { 0.0 };
            let pu = if u.is_finite() { (1e-2 * u.abs().max(1.0)).min(0.49 * width) } else { 0.0 };
            if l.is_finite() {
                xf[i] = xf[i].max(l + pl);
            }
            if u.is_finite() {
                xf[i] = xf[i].min(u - pu);
            }
        }

        let report = |status, iterations, violation, stationarity, objective, failed: Option<String>| SolveReport {
            status,
            iterations,
            violation,
            stationarity,
            objective,
            wall_time_s: start.elapsed().as_secs_f64(),
            failed_block: failed,
        };

        let mut x_full = self.full_x(&x_template, &xf);
        let first = evaluate(problem, &self.layout, &x_full, true);
        let mut point = match first {
            Ok(p) => {
                self.layout.set_row_scales(problem, &p);
                evaluate(problem, &self.layout, &x_full, true).expect("finite at the same point")
            }
            Err(name) => {
                return (x_full, report(SolveStatus::NumericalFailure, 0, f64::INFINITY, f64::INFINITY, f64::NAN, Some(name)));
            }
        };
        let gmax = max_abs(&point.grad);
        self.sigma = if gmax > 100.0 { 100.0 / gmax } else { 1.0 };

        let mut mu = self.opts.mu0;
        let s0: Vec<f64> = point.c_i.iter().map(|c| (-c).max(1e-2)).collect();
        let mut it = Iterate {
            y_i: vec![0.0; s0.len()],
            s: s0,
            y_e: vec![0.0; self.layout.m_e],
            z_l: vec![0.0; nf],
            z_u: vec![0.0; nf],
            x: xf,
        };
        self.central_multipliers(&mut it, mu);
        let theta0 = Self::theta(&point, &it.s);
        self.theta_max = THETA_MAX_FACTOR * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);

        let mut best: Option<(f64, Vec<f64>, f64, f64, f64)> = None;
        let mut status = SolveStatus::MaxIter;
        let mut failed_block = None;
        let mut iterations = 0;
        let mut last_alpha = 0.0;
        let mut last_delta = 0.0;
        let mut force_mu_decrease = false;
        let mut stalls = 0;

        loop {
            let violation = self.violation(&point, &it.x);
            let stationarity = self.stationarity(&point, &it);
            let score = (violation / self.opts.tol_feas).max(stationarity / self.opts.tol_opt);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, x_full.clone(), violation, stationarity, point.f));
            }
            log::debug!(
                "iter {iterations:4} f {:+.6e} viol {violation:.2e} stat {stationarity:.2e} mu {mu:.1e} alpha {last_alpha:.1e} dw {last_delta:.1e} |y| {:.1e}",
                point.f,
                max_abs(&it.y_e)
            );
            if violation <= self.opts.tol_feas && stationarity <= self.opts.tol_opt {
                status = SolveStatus::Converged;
                break;
            }
            if iterations >= self.opts.max_iter {
                break;
            }
            iterations += 1;
            let mut mu_changed = false;
            while mu > self.mu_min && (force_mu_decrease || self.barrier_error(&point, &it, mu) <= KAPPA_EPS * mu) {
                mu = (mu * MU_FACTOR).max(self.mu_min);
                force_mu_decrease = false;
                mu_changed = true;
            }
            force_mu_decrease = false;
            if mu_changed {
                self.filter.clear();
            }

            let sigma_s: Vec<f64> = it.y_i.iter().zip(&it.s).map(|(y, s)| y / s).collect();
            let diag: Vec<f64> = (0..nf)
                .map(|i| {
                    let mut d = 0.0;
                    if self.has_l(i) {
                        d += it.z_l[i] / (it.x[i] - self.lower[i]);
                    }
                    if self.has_u(i) {
                        d += it.z_u[i] / (self.upper[i] - it.x[i]);
                    }
                    d
                })
                .collect();
            let delta_c = (DELTA_C_RATIO * max_abs(&point.c_e)).clamp(DELTA_C, DELTA_C_MAX);
            self.assemble(&point, &x_full, &diag, delta_c, Some((&it.y_e, &it.y_i)), &sigma_s);
            let Some(delta_w) = self.factor_with_inertia() else {
                status = SolveStatus::NumericalFailure;
                break;
            };
            let r_i: Vec<f64> = point.c_i.iter().zip(&it.s).map(|(c, s)| c + s).collect();
            let (dx, dy_e, ds, dy_i) = self.direction(&point, &it, mu, &sigma_s, &point.c_e, &r_i);

            let theta = Self::theta(&point, &it.s);
            let phi = self.barrier_value(point.f, &it.x, &it.s, mu);
            let slope = self.barrier_slope(&point, &it, mu, &dx, &ds);
            let alpha_max = self.primal_step_limit(&it, &dx, &ds);
            let alpha_dual = {
                let a1 = Self::max_step(&it.z_l, &self.combine_dz(&it, &dx, mu, true), |i| self.has_l(i).then_some(0.0));
                let a2 = Self::max_step(&it.z_u, &self.combine_dz(&it, &dx, mu, false), |i| self.has_u(i).then_some(0.0));
                let a3 = Self::max_step(&it.y_i, &dy_i, |_| Some(0.0));
                a1.min(a2).min(a3)
            };
            let alpha_min = if slope < 0.0 {
                GAMMA_ALPHA * GAMMA_THETA.min(GAMMA_PHI * theta / -slope).min(theta.powf(S_THETA) / (-slope).powf(S_PHI))
            } else {
                GAMMA_ALPHA * GAMMA_THETA
            };
            let tiny = (0..nf).all(|i| dx[i].abs() <= 1e-14 * (1.0 + it.x[i].abs()))
                && (0..self.layout.m_i).all(|r| ds[r].abs() <= 1e-14 * (1.0 + it.s[r].abs()));

            // Some(is f-type) when the trial point is acceptable
            let acceptable = |solver: &Self, alpha: f64, theta_t: f64, phi_t: f64| -> Option<bool> {
                if !phi_t.is_finite() || !solver.filter_accepts(theta_t, phi_t) {
                    return None;
                }
                let switching = slope < 0.0 && alpha * (-slope).powf(S_PHI) > theta.powf(S_THETA);
                if switching && theta <= solver.theta_min {
                    (phi_t <= phi + ETA_PHI * alpha * slope).then_some(true)
                } else {
                    (theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi - GAMMA_PHI * theta).then_some(false)
                }
            };

            let mut accepted: Option<(Vec<f64>, Vec<f64>, f64, bool)> = None;
            if tiny {
                let xt: Vec<f64> = it.x.iter().zip(&dx).map(|(x, d)| x + alpha_max * d).collect();
                let st: Vec<f64> = it.s.iter().zip(&ds).map(|(s, d)| s + alpha_max * d).collect();
                accepted = Some((xt, st, alpha_max, true));
                force_mu_decrease = true;
            }
            let mut alpha = alpha_max;
            let mut first_trial = true;
            let mut trials = 0;
            while accepted.is_none() && alpha >= alpha_min && trials < 60 {
                trials += 1;
                if let Some((xt, st, pt)) = self.trial(&it, &x_full, alpha, &dx, &ds) {
                    let theta_t = Self::theta(&pt, &st);
                    let phi_t = self.barrier_value(pt.f, &xt, &st, mu);
                    if let Some(f_type) = acceptable(self, alpha, theta_t, phi_t) {
                        accepted = Some((xt, st, alpha, f_type));
                        break;
                    }
                    if first_trial && theta_t >= theta {
                        // second-order corrections
                        let mut c_e: Vec<f64> = point.c_e.iter().zip(&pt.c_e).map(|(a, b)| alpha * a + b).collect();
                        let mut c_i: Vec<f64> = (0..self.layout.m_i).map(|r| alpha * r_i[r] + pt.c_i[r] + st[r]).collect();
                        let mut theta_prev = theta;
                        for _ in 0..MAX_SOC {
                            let (dxc, _, dsc, _) = self.direction(&point, &it, mu, &sigma_s, &c_e, &c_i);
                            let ac = self.primal_step_limit(&it, &dxc, &dsc);
                            let Some((xc, sc, pc)) = self.trial(&it, &x_full, ac, &dxc, &dsc) else { break };
                            let theta_c = Self::theta(&pc, &sc);
                            let phi_c = self.barrier_value(pc.f, &xc, &sc, mu);
                            if let Some(f_type) = acceptable(self, alpha, theta_c, phi_c) {
                                accepted = Some((xc, sc, alpha, f_type));
                                break;
                            }
                            if theta_c > KAPPA_SOC * theta_prev {
                                break;
                            }
                            theta_prev = theta_c;
                            for (r, c) in c_e.iter_mut().enumerate() {
                                *c = ac * *c + pc.c_e[r];
                            }
                            for (r, c) in c_i.iter_mut().enumerate() {
                                *c = ac * *c + pc.c_i[r] + sc[r];
                            }
                        }
                        if accepted.is_some() {
                            break;
                        }
                    }
                }
                first_trial = false;
                alpha *= 0.5;
            }

            let Some((x_new, s_new, alpha_p, f_type)) = accepted else {
                if theta <= 1e-2 * self.theta_min {
                    // feasible but no acceptable decrease: tighten the barrier
                    stalls += 1;
                    if stalls > 5 || mu <= self.mu_min {
                        status = SolveStatus::NumericalFailure;
                        break;
                    }
                    force_mu_decrease = true;
                    continue;
                }
                self.augment_filter(theta, phi);
                match self.restore(&mut it, &mut x_full, &mut point, mu, &mut iterations) {
                    Restoration::Recovered => {
                        self.central_multipliers(&mut it, mu);
                        continue;
                    }
                    Restoration::Infeasible => status = SolveStatus::InfeasibleDetected,
                    Restoration::OutOfIterations => status = SolveStatus::MaxIter,
                    Restoration::Failed(name) => {
                        status = SolveStatus::NumericalFailure;
                        failed_block = name;
                    }
                }
                break;
            };
            stalls = 0;
            if !f_type {
                self.augment_filter(theta, phi);
            }

            last_alpha = alpha_p;
            last_delta = delta_w;
            let dz_l = self.combine_dz(&it, &dx, mu, true);
            let dz_u = self.combine_dz(&it, &dx, mu, false);
            for r in 0..self.layout.m_e {
                it.y_e[r] += alpha_p * dy_e[r];
            }
            for r in 0..self.layout.m_i {
                it.y_i[r] += alpha_dual * dy_i[r];
            }
            for i in 0..nf {
                it.z_l[i] += alpha_dual * dz_l[i];
                it.z_u[i] += alpha_dual * dz_u[i];
            }
            it.x = x_new;
            it.s = s_new;
            // keep the bound multipliers close to the central path
            for i in 0..nf {
                if self.has_l(i) {
                    let d = it.x[i] - self.lower[i];
                    it.z_l[i] = it.z_l[i].clamp(mu / (KAPPA_SIGMA * d), KAPPA_SIGMA * mu / d);
                }
                if self.has_u(i) {
                    let d = self.upper[i] - it.x[i];
                    it.z_u[i] = it.z_u[i].clamp(mu / (KAPPA_SIGMA * d), KAPPA_SIGMA * mu / d);
                }
            }
            for r in 0..self.layout.m_i {
                let s = it.s[r];
                it.y_i[r] = it.y_i[r].clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
            }
            x_full = self.full_x(&x_full, &it.x);
            point = match evaluate(problem, &self.layout, &x_full, true) {
                Ok(p) => p,
                Err(name) => {
                    let v = problem.violation(&x_full);
                    return (x_full, report(SolveStatus::NumericalFailure, iterations, v, f64::INFINITY, f64::NAN, Some(name)));
                }
            };
        }

        if status == SolveStatus::Converged {
            let violation = self.violation(&point, &it.x);
            let stationarity = self.stationarity(&point, &it);
            return (x_full, report(status, iterations, violation, stationarity, point.f, None));
        }
        let (_, xb, violation, stationarity, f) = best.expect("at least one iterate");
        (xb, report(status, iterations, violation, stationarity, f, failed_block))
    }

    fn combine_dz(&self, it: &Iterate, dx: &[f64], mu: f64, lower: bool) -> Vec<f64> {
        (0..self.nf())
            .map(|i| {
                if lower {
                    if !self.has_l(i) {
                        return 0.0;
                    }
                    let d = it.x[i] - self.lower[i];
                    mu / d - it.z_l[i] - it.z_l[i] / d * dx[i]
                } else {
                    if !self.has_u(i) {
                        return 0.0;
                    }
                    let d = self.upper[i] - it.x[i];
                    mu / d - it.z_u[i] + it.z_u[i] / d * dx[i]
                }
            })
            .collect()
    }
}

/// Solves `problem` from `x0` (clamped into the bounds).
pub fn solve(problem: &NlpProblem, x0: &[f64], opts: &SolveOptions) -> (Vec<f64>, SolveReport) {
    assert_eq!(x0.len(), problem.n());
    let mut solver = Solver::new(problem, opts.clone());
    solver.run(x0)
}
