//! Envelope (profile) LDLᵀ factorization of symmetric matrices without
//! pivoting, with reverse Cuthill–McKee ordering.

use std::collections::VecDeque;

/// Symmetric sparsity graph over `n` nodes.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    adj: Vec<Vec<usize>>,
}

impl SymmetricPattern {
    pub fn new(n: usize) -> Self {
        SymmetricPattern { adj: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i].push(j);
            self.adj[j].push(i);
        }
    }

    pub fn add_clique(&mut self, nodes: &[usize]) {
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                self.add_edge(i, j);
            }
        }
    }

    pub fn finalize(&mut self) {
        for list in &mut self.adj {
            list.sort_unstable();
            list.dedup();
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Reverse Cuthill–McKee order (new position → node), component by
    /// component, each started from a pseudo-peripheral node.
    pub fn rcm_order(&self) -> Vec<usize> {
        let n = self.n();
        let degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&i| (degree[i], i));
        for &seed in &by_degree {
            if visited[seed] {
                continue;
            }
            let start = self.pseudo_peripheral(seed, &degree);
            let mut queue = VecDeque::from([start]);
            visited[start] = true;
            while let Some(node) = queue.pop_front() {
                order.push(node);
                let mut next: Vec<usize> = self.adj[node].iter().copied().filter(|&m| !visited[m]).collect();
                next.sort_by_key(|&m| (degree[m], m));
                for m in next {
                    visited[m] = true;
                    queue.push_back(m);
                }
            }
        }
        order.reverse();
        order
    }

    fn pseudo_peripheral(&self, seed: usize, degree: &[usize]) -> usize {
        let mut node = seed;
        let mut ecc = 0;
        for _ in 0..8 {
            let levels = self.bfs_levels(node);
            let depth = *levels.iter().flatten().max().unwrap_or(&0);
            if depth <= ecc && ecc > 0 {
                break;
            }
            ecc = depth;
            node = (0..self.n())
                .filter(|&i| levels[i] == Some(depth))
                .min_by_key(|&i| (degree[i], i))
                .unwrap_or(node);
        }
        node
    }

    fn bfs_levels(&self, start: usize) -> Vec<Option<usize>> {
        let mut level = vec![None; self.n()];
        level[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            let l = level[node].unwrap();
            for &m in &self.adj[node] {
                if level[m].is_none() {
                    level[m] = Some(l + 1);
                    queue.push_back(m);
                }
            }
        }
        level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Symmetric matrix in envelope storage together with its LDLᵀ factor.
#[derive(Debug, Clone)]
pub struct ProfileLdl {
    /// `position[node]` is the row of `node` in the permuted matrix.
    position: Vec<usize>,
    order: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
    factor: Vec<f64>,
    diag: Vec<f64>,
}

impl ProfileLdl {
    /// `order[k]` is the node placed at row `k`.
    pub fn new(pattern: &SymmetricPattern, order: Vec<usize>) -> Self {
        let n = pattern.n();
        assert_eq!(order.len(), n);
        let mut position = vec![0; n];
        for (k, &node) in order.iter().enumerate() {
            position[node] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for node in 0..n {
            let r = position[node];
            for &m in pattern.neighbors(node) {
                let c = position[m];
                if c < r {
                    first[r] = first[r].min(c);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for r in 0..n {
            start.push(total);
            total += r - first[r] + 1;
        }
        start.push(total);
        ProfileLdl {
            position,
            order,
            first,
            start,
            values: vec![0.0; total],
            factor: vec![0.0; total],
            diag: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn storage(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` to entry `(i, j)` (and, implicitly, `(j, i)`), in node
    /// numbering. Off-diagonal entries must be added once per pair.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = (self.position[i], self.position[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        debug_assert!(c >= self.first[r], "entry outside the envelope");
        self.values[self.start[r] + c - self.first[r]] += v;
    }

    /// Factorizes the assembled matrix and returns the pivot inertia. Pivots
    /// with magnitude below `zero_tol` count as zero.
    pub fn factor(&mut self, zero_tol: f64) -> Inertia {
        let n = self.n();
        self.factor.copy_from_slice(&self.values);
        let mut work = vec![0.0; n];
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // work[k - fi] = L[i][k] * D[k]
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.factor[si + j - fi];
                if k0 < j {
                    let u = &work[k0 - fi..j - fi];
                    let lj = &self.factor[sj + k0 - fj..sj + j - fj];
                    s -= dot(u, lj);
                }
                work[j - fi] = s;
            }
            let mut d = self.factor[si + i - fi];
            for j in fi..i {
                let l = work[j - fi] / self.diag[j];
                d -= work[j - fi] * l;
                self.factor[si + j - fi] = l;
            }
            if d.abs() <= zero_tol || !d.is_finite() {
                inertia.zero += 1;
            } else if d > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.diag[i] = d;
        }
        inertia
    }

    /// Solves with the current factor; `b` and the result use node numbering.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = self.order.iter().map(|&node| b[node]).collect();
        for i in 0..n {
            let fi = self.first[i];
            if fi < i {
                let row = &self.factor[self.start[i]..self.start[i] + i - fi];
                y[i] -= dot(row, &y[fi..i]);
            }
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.factor[self.start[i]..self.start[i] + i - fi];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &node) in self.order.iter().enumerate() {
            x[node] = y[k];
        }
        x
    }

    /// Product of the assembled (unfactored) matrix with `x`, node numbering.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let xp: Vec<f64> = self.order.iter().map(|&node| x[node]).collect();
        let mut yp = vec![0.0; n];
        for r in 0..n {
            let fr = self.first[r];
            let row = &self.values[self.start[r]..self.start[r] + r - fr + 1];
            yp[r] += dot(&row[..r - fr], &xp[fr..r]) + row[r - fr] * xp[r];
            for (k, a) in row[..r - fr].iter().enumerate() {
                yp[fr + k] += a * xp[r];
            }
        }
        let mut y = vec![0.0; n];
        for (k, &node) in self.order.iter().enumerate() {
            y[node] = yp[k];
        }
        y
    }

    /// Solves and applies `steps` rounds of iterative refinement.
    pub fn solve_refined(&self, b: &[f64], steps: usize) -> Vec<f64> {
        let mut x = self.solve(b);
        for _ in 0..steps {
            let ax = self.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let dx = self.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}
