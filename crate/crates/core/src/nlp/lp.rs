//! Dense two-phase simplex with Bland's rule.
//!
//! Solves `min cᵀx` subject to `A_ub x ≤ b_ub`, `A_eq x = b_eq` and
//! per-variable bounds (either side may be infinite).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Objective of the dual solution read off the final tableau.
    pub dual_objective: f64,
}

impl LpSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs()
    }
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

/// How an original variable is rebuilt from nonnegative standard-form ones.
#[derive(Debug, Clone, Copy)]
enum Map {
    Shift { col: usize, offset: f64 },
    Mirror { col: usize, offset: f64 },
    Split { pos: usize, neg: usize },
}

pub fn lp_solve(
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    c: &DVector<f64>,
    bounds: &[(f64, f64)],
) -> Result<LpSolution, LpError> {
    let n = c.len();
    if bounds.len() != n || a_ub.nrows() != b_ub.len() || a_eq.nrows() != b_eq.len() {
        return Err(LpError::Dimension("row or bound counts".into()));
    }
    if (a_ub.nrows() > 0 && a_ub.ncols() != n) || (a_eq.nrows() > 0 && a_eq.ncols() != n) {
        return Err(LpError::Dimension("column counts".into()));
    }
    for &(l, u) in bounds {
        if l > u {
            return Err(LpError::Infeasible);
        }
    }

    // Standard-form columns for the original variables.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut range_rows = Vec::new();
    for (j, &(l, u)) in bounds.iter().enumerate() {
        if l.is_finite() {
            maps.push(Map::Shift { col: ncols, offset: l });
            if u.is_finite() {
                range_rows.push((j, ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(Map::Mirror { col: ncols, offset: u });
            ncols += 1;
        } else {
            maps.push(Map::Split { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }
    let n_orig_cols = ncols;
    let n_ineq = a_ub.nrows() + range_rows.len();
    let n_slack = n_ineq;
    let m = n_ineq + a_eq.nrows();
    let n_struct = n_orig_cols + n_slack;

    // rows: [A_ub | I] = b_ub', range rows, then equalities
    let mut a = DMatrix::zeros(m, n_struct);
    let mut b = DVector::zeros(m);
    let mut cost = DVector::zeros(n_struct);
    let mut const_obj = 0.0;
    let put = |a: &mut DMatrix<f64>, row: usize, j: usize, coef: f64, b: &mut DVector<f64>| match maps[j] {
        Map::Shift { col, offset } => {
            a[(row, col)] += coef;
            b[row] -= coef * offset;
        }
        Map::Mirror { col, offset } => {
            a[(row, col)] -= coef;
            b[row] -= coef * offset;
        }
        Map::Split { pos, neg } => {
            a[(row, pos)] += coef;
            a[(row, neg)] -= coef;
        }
    };
    for i in 0..a_ub.nrows() {
        b[i] = b_ub[i];
        for j in 0..n {
            if a_ub[(i, j)] != 0.0 {
                put(&mut a, i, j, a_ub[(i, j)], &mut b);
            }
        }
        a[(i, n_orig_cols + i)] = 1.0;
    }
    for (k, &(_, col, width)) in range_rows.iter().enumerate() {
        let i = a_ub.nrows() + k;
        a[(i, col)] = 1.0;
        a[(i, n_orig_cols + i)] = 1.0;
        b[i] = width;
    }
    for i in 0..a_eq.nrows() {
        let row = n_ineq + i;
        b[row] = b_eq[i];
        for j in 0..n {
            if a_eq[(i, j)] != 0.0 {
                put(&mut a, row, j, a_eq[(i, j)], &mut b);
            }
        }
    }
    for j in 0..n {
        match maps[j] {
            Map::Shift { col, offset } => {
                cost[col] += c[j];
                const_obj += c[j] * offset;
            }
            Map::Mirror { col, offset } => {
                cost[col] -= c[j];
                const_obj += c[j] * offset;
            }
            Map::Split { pos, neg } => {
                cost[pos] += c[j];
                cost[neg] -= c[j];
            }
        }
    }
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for j in 0..n_struct {
                a[(i, j)] = -a[(i, j)];
            }
        }
    }

    let mut tableau = Tableau::new(&a, &b);
    // phase 1: minimize the sum of artificials
    let mut phase1 = DVector::zeros(tableau.width());
    for i in 0..m {
        phase1[n_struct + i] = 1.0;
    }
    tableau.set_cost(&phase1);
    tableau.run(tableau.width())?;
    let infeasibility = -tableau.t[(m, tableau.rhs_col())];
    if infeasibility > 1e-8 * (1.0 + b.amax()) {
        return Err(LpError::Infeasible);
    }
    tableau.drive_out_artificials(n_struct);

    // phase 2
    let mut full_cost = DVector::zeros(tableau.width());
    full_cost.rows_mut(0, n_struct).copy_from(&cost);
    tableau.set_cost(&full_cost);
    tableau.run(n_struct)?;

    let z = tableau.solution();
    let mut x = DVector::zeros(n);
    for j in 0..n {
        x[j] = match maps[j] {
            Map::Shift { col, offset } => offset + z[col],
            Map::Mirror { col, offset } => offset - z[col],
            Map::Split { pos, neg } => z[pos] - z[neg],
        };
    }
    let objective = c.dot(&x);
    // duals: reduced cost of artificial column i is -y_i
    let rc = tableau.t.row(m);
    let mut dual = const_obj;
    for i in 0..m {
        if !tableau.dropped[i] {
            dual += -rc[n_struct + i] * b[i];
        }
    }
    Ok(LpSolution {
        x,
        objective,
        dual_objective: dual,
    })
}

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    dropped: Vec<bool>,
    m: usize,
}

impl Tableau {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let (m, n) = a.shape();
        let width = n + m;
        let mut t = DMatrix::zeros(m + 1, width + 1);
        t.view_mut((0, 0), (m, n)).copy_from(a);
        for i in 0..m {
            t[(i, n + i)] = 1.0;
            t[(i, width)] = b[i];
        }
        Tableau {
            t,
            basis: (n..n + m).collect(),
            dropped: vec![false; m],
            m,
        }
    }

    fn width(&self) -> usize {
        self.t.ncols() - 1
    }

    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn set_cost(&mut self, cost: &DVector<f64>) {
        let m = self.m;
        let w = self.width();
        for j in 0..w {
            self.t[(m, j)] = cost[j];
        }
        self.t[(m, w)] = 0.0;
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 && !self.dropped[i] {
                for j in 0..=w {
                    let v = self.t[(i, j)];
                    self.t[(m, j)] -= cb * v;
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let cols = self.t.ncols();
        for j in 0..cols {
            self.t[(row, j)] /= p;
        }
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..cols {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule iterations; only columns below `allowed` may enter.
    fn run(&mut self, allowed: usize) -> Result<(), LpError> {
        let m = self.m;
        let rhs = self.rhs_col();
        let limit = 50 * (self.t.ncols() + m) + 1000;
        for _ in 0..limit {
            let entering = (0..allowed).find(|&j| self.t[(m, j)] < -COST_TOL);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..m {
                if self.dropped[i] {
                    continue;
                }
                let a = self.t[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    let better = match best {
                        None => true,
                        Some((r, _, bv)) => ratio < r - 1e-12 || (ratio <= r + 1e-12 && self.basis[i] < bv),
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            let Some((_, row, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, col);
        }
        Err(LpError::IterationLimit)
    }

    fn drive_out_artificials(&mut self, n_struct: usize) {
        for i in 0..self.m {
            if self.basis[i] < n_struct {
                continue;
            }
            match (0..n_struct).find(|&j| self.t[(i, j)].abs() > PIVOT_TOL) {
                Some(j) => self.pivot(i, j),
                None => self.dropped[i] = true,
            }
        }
    }

    fn solution(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.width());
        let rhs = self.rhs_col();
        for i in 0..self.m {
            if !self.dropped[i] {
                z[self.basis[i]] = self.t[(i, rhs)];
            }
        }
        z
    }
}
