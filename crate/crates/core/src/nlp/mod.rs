//! Sparse constrained nonlinear programming.
//!
//! A problem is a box-bounded variable vector plus a list of blocks. Each
//! block reads a small set of variables and is either an objective term
//! (dimension 1, summed), an equality `c(x) = 0` or an inequality
//! `c(x) ≤ 0`. Blocks see only their local variables, which fixes the
//! sparsity pattern of the Jacobian and the Hessian of the Lagrangian.

mod ipm;
mod ldl;
pub mod lp;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ipm::solve;
pub use ldl::{ProfileLdl, SymmetricPattern};
pub use lp::{lp_solve, LpError, LpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Objective,
    Equality,
    Inequality,
}

pub trait ConstraintBlock: Send + Sync {
    fn name(&self) -> String;
    fn kind(&self) -> BlockKind;
    /// Global indices of the variables this block reads, in local order.
    fn vars(&self) -> &[usize];
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Local Jacobian, `dim × vars().len()`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|z, out| self.eval(z, out), x, self.dim())
    }

    /// Local Hessian of `Σ yᵢ cᵢ(x)`.
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        if self.is_linear() {
            return DMatrix::zeros(x.len(), x.len());
        }
        fd_hessian(|z| self.jacobian(z), x, y)
    }

    fn is_linear(&self) -> bool {
        false
    }
}

/// Central-difference Jacobian.
pub fn fd_jacobian(eval: impl Fn(&[f64], &mut [f64]), x: &[f64], dim: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(dim, n);
    let mut z = x.to_vec();
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    for j in 0..n {
        let h = 6e-6 * (1.0 + x[j].abs());
        z[j] = x[j] + h;
        eval(&z, &mut plus);
        z[j] = x[j] - h;
        eval(&z, &mut minus);
        z[j] = x[j];
        for i in 0..dim {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Hessian of `yᵀc` by central differences of a Jacobian routine.
pub fn fd_hessian(jacobian: impl Fn(&[f64]) -> DMatrix<f64>, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let y = DVector::from_column_slice(y);
    let mut hess = DMatrix::zeros(n, n);
    let mut z = x.to_vec();
    for j in 0..n {
        let h = 1e-5 * (1.0 + x[j].abs());
        z[j] = x[j] + h;
        let gp = jacobian(&z).tr_mul(&y);
        z[j] = x[j] - h;
        let gm = jacobian(&z).tr_mul(&y);
        z[j] = x[j];
        hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    (&hess + hess.transpose()) * 0.5
}

/// Box-bounded problem made of objective and constraint blocks.
#[derive(Default)]
pub struct NlpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub blocks: Vec<Box<dyn ConstraintBlock>>,
}

impl NlpProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        NlpProblem {
            lower,
            upper,
            blocks: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn add(&mut self, block: impl ConstraintBlock + 'static) {
        self.add_boxed(Box::new(block));
    }

    pub fn add_boxed(&mut self, block: Box<dyn ConstraintBlock>) {
        debug_assert!(block.vars().iter().all(|&v| v < self.n()));
        debug_assert!(block.kind() != BlockKind::Objective || block.dim() == 1);
        self.blocks.push(block);
    }

    /// Appends `count` variables with the given bounds and returns the index
    /// of the first.
    pub fn add_variables(&mut self, count: usize, lower: f64, upper: f64) -> usize {
        let start = self.n();
        self.lower.extend(std::iter::repeat(lower).take(count));
        self.upper.extend(std::iter::repeat(upper).take(count));
        start
    }

    pub fn constraint_count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind() == kind).map(|b| b.dim()).sum()
    }

    pub fn local(&self, block: &dyn ConstraintBlock, x: &[f64]) -> Vec<f64> {
        block.vars().iter().map(|&v| x[v]).collect()
    }

    pub fn eval_block(&self, index: usize, x: &[f64]) -> Vec<f64> {
        let b = &self.blocks[index];
        let mut out = vec![0.0; b.dim()];
        b.eval(&self.local(b.as_ref(), x), &mut out);
        out
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.blocks.len())
            .filter(|&i| self.blocks[i].kind() == BlockKind::Objective)
            .map(|i| self.eval_block(i, x)[0])
            .sum()
    }

    /// Largest violation of bounds, equalities and inequalities.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, &xi) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - xi).max(xi - self.upper[i]);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let c = self.eval_block(i, x);
            match b.kind() {
                BlockKind::Equality => c.iter().for_each(|v| worst = worst.max(v.abs())),
                BlockKind::Inequality => c.iter().for_each(|v| worst = worst.max(*v)),
                BlockKind::Objective => {}
            }
        }
        worst
    }

    /// Violation restricted to blocks whose name starts with `prefix`.
    pub fn block_violation(&self, x: &[f64], prefix: &str) -> f64 {
        let mut worst = 0.0f64;
        for (i, b) in self.blocks.iter().enumerate() {
            if !b.name().starts_with(prefix) {
                continue;
            }
            let c = self.eval_block(i, x);
            match b.kind() {
                BlockKind::Equality => c.iter().for_each(|v| worst = worst.max(v.abs())),
                BlockKind::Inequality => c.iter().for_each(|v| worst = worst.max(*v)),
                BlockKind::Objective => {}
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iter: usize,
    pub mu0: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_feas: 1e-6,
            tol_opt: 1e-4,
            max_iter: 500,
            mu0: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleDetected,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::InfeasibleDetected => "infeasible-detected",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Largest constraint or bound violation at the returned point.
    pub violation: f64,
    /// Scaled projected-gradient stationarity at the returned point.
    pub stationarity: f64,
    pub objective: f64,
    pub wall_time_s: f64,
    /// Block that produced a non-finite value, if any.
    pub failed_block: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub flagged: bool,
}

pub const DERIVATIVE_TOL: f64 = 1e-5;

/// Compares every block's Jacobian against central finite differences with
/// step `1e-6 (1 + |xᵢ|)`, plus one seeded random directional derivative.
pub fn check_derivatives(problem: &NlpProblem, x: &[f64], seed: u64) -> Vec<BlockCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    problem
        .blocks
        .iter()
        .map(|b| {
            let xl = problem.local(b.as_ref(), x);
            let analytic = b.jacobian(&xl);
            let dim = b.dim();
            let mut worst = 0.0f64;
            let mut z = xl.clone();
            let mut plus = vec![0.0; dim];
            let mut minus = vec![0.0; dim];
            for j in 0..xl.len() {
                let h = 1e-6 * (1.0 + xl[j].abs());
                z[j] = xl[j] + h;
                b.eval(&z, &mut plus);
                z[j] = xl[j] - h;
                b.eval(&z, &mut minus);
                z[j] = xl[j];
                for i in 0..dim {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    worst = worst.max((analytic[(i, j)] - fd).abs() / (1.0 + fd.abs()));
                }
            }
            let dir: Vec<f64> = (0..xl.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let zp: Vec<f64> = xl.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let zm: Vec<f64> = xl.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            b.eval(&zp, &mut plus);
            b.eval(&zm, &mut minus);
            let jd = &analytic * DVector::from_column_slice(&dir);
            for i in 0..dim {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                worst = worst.max((jd[i] - fd).abs() / (1.0 + fd.abs()));
            }
            if !worst.is_finite() {
                worst = f64::INFINITY;
            }
            BlockCheck {
                name: b.name(),
                max_rel_error: worst,
                flagged: !(worst <= DERIVATIVE_TOL),
            }
        })
        .collect()
}

/// Perturbs each variable at random and reports `(block, variable)` pairs
/// where a block output changed although the variable is not declared.
pub fn probe_sparsity(problem: &NlpProblem, x: &[f64], seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Vec<f64>> = (0..problem.blocks.len()).map(|i| problem.eval_block(i, x)).collect();
    let mut offenders = Vec::new();
    let mut z = x.to_vec();
    for v in 0..problem.n() {
        z[v] = x[v] + rng.gen_range(0.01..0.1) * (1.0 + x[v].abs());
        for (i, b) in problem.blocks.iter().enumerate() {
            if b.vars().contains(&v) {
                continue;
            }
            if problem.eval_block(i, &z) != base[i] {
                offenders.push((b.name(), v));
            }
        }
        z[v] = x[v];
    }
    offenders
}

/// Linear block `A x_local − b`, with an exact Jacobian.
pub struct LinearBlock {
    pub name: String,
    pub kind: BlockKind,
    pub vars: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConstraintBlock for LinearBlock {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn kind(&self) -> BlockKind {
        self.kind
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let r = &self.a * DVector::from_column_slice(x) - &self.b;
        out.copy_from_slice(r.as_slice());
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// Objective term `Σ wᵢ xᵢ² + Σ gᵢ xᵢ` over the block's variables.
pub struct QuadraticObjective {
    pub name: String,
    pub vars: Vec<usize>,
    pub weights: Vec<f64>,
    pub linear: Vec<f64>,
}

impl ConstraintBlock for QuadraticObjective {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Objective
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x
            .iter()
            .zip(&self.weights)
            .zip(&self.linear)
            .map(|((x, w), g)| w * x * x + g * x)
            .sum();
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_iterator(1, x.len(), x.iter().zip(&self.weights).zip(&self.linear).map(|((x, w), g)| 2.0 * w * x + g))
    }
    fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(x.len(), self.weights.iter().map(|w| 2.0 * w * y[0])))
    }
    fn is_linear(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }
}

/// Block defined by closures, with finite-difference derivatives unless
/// supplied.
pub struct FnBlock<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub name: String,
    pub kind: BlockKind,
    pub vars: Vec<usize>,
    pub dim: usize,
    pub f: F,
}

impl<F> ConstraintBlock for FnBlock<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }
    fn kind(&self) -> BlockKind {
        self.kind
    }
    fn vars(&self) -> &[usize] {
        &self.vars
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}
