//! Exact discrete optimal transport by the transportation simplex (u-v method).

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;
const REDUCED_TOL: f64 = 1e-12;

/// Optimal value and plan (row-major `k₁ × k₂`).
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub value: f64,
    pub plan: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Transport {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }
}

fn check_weights(w: &[f64], name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Infeasible(format!("{name} is empty")));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Infeasible(format!("{name} has negative or non-finite entries")));
    }
    Ok(())
}

/// Solves `min Σ c_ij π_ij` over couplings of `a` and `b`.
///
/// `cost` is row-major `a.len() × b.len()`. The weights must have equal total
/// mass (within 1e-9); they need not be normalized.
pub fn discrete_ot(cost: &[f64], a: &[f64], b: &[f64]) -> Result<Transport> {
    check_weights(a, "a")?;
    check_weights(b, "b")?;
    let (m, n) = (a.len(), b.len());
    if cost.len() != m * n {
        return Err(Error::Shape(format!("cost has {} entries, expected {m}×{n}", cost.len())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("cost matrix has non-finite entries".into()));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if (sa - sb).abs() > MASS_TOL * sa.max(sb).max(1.0) {
        return Err(Error::Infeasible(format!("marginals carry different mass ({sa} vs {sb})")));
    }
    let mut s = Simplex::northwest(a, b);
    s.optimize(cost)?;
    let plan = s.dense();
    let value = plan.iter().zip(cost).map(|(p, c)| p * c).sum();
    Ok(Transport { value, plan, rows: m, cols: n })
}

/// Basic solution stored as a spanning tree over the `m + n` row/column nodes.
struct Simplex {
    m: usize,
    n: usize,
    /// Basic cells `(i, j, flow)`; always `m + n − 1` of them.
    basis: Vec<(usize, usize, f64)>,
}

impl Simplex {
    fn northwest(a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0], b[0]);
        loop {
            let x = ra.min(rb);
            basis.push((i, j, x));
            if i + 1 == m && j + 1 == n {
                break;
            }
            if j + 1 == n || (i + 1 < m && ra <= rb) {
                rb -= x;
                i += 1;
                ra = a[i];
            } else {
                ra -= x;
                j += 1;
                rb = b[j];
            }
        }
        Self { m, n, basis }
    }

    fn dense(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.m * self.n];
        for &(i, j, x) in &self.basis {
            p[i * self.n + j] = x.max(0.0);
        }
        p
    }

    /// Adjacency of the basis tree; node `i < m` is row `i`, node `m + j` is column `j`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(u) = stack.pop() {
            for &(v, k) in &adj[u] {
                if pot[v].is_nan() {
                    let (i, j, _) = self.basis[k];
                    let c = cost[i * n + j];
                    // u_i + v_j = c_ij on basic cells
                    pot[v] = c - pot[u];
                    stack.push(v);
                }
            }
        }
        (pot[..m].to_vec(), pot[m..].to_vec())
    }

    /// Basis indices on the tree path from column `q` to row `p`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], p: usize, q: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let start = self.m + q;
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            if u == p {
                break;
            }
            for &(v, k) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some((u, k));
                    queue.push_back(v);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = p;
        while cur != start {
            let (u, k) = prev[cur].expect("basis is a spanning tree");
            path.push(k);
            cur = u;
        }
        path.reverse();
        path
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let max_iter = 100 * (m + n) * (m + n) + 1000;
        let mut degenerate_run = 0usize;
        for _ in 0..max_iter {
            let adj = self.adjacency();
            let (u, v) = self.potentials(cost, &adj);
            let scale = cost.iter().fold(1.0f64, |s, c| s.max(c.abs()));
            let mut entering = None;
            let mut best = -REDUCED_TOL * scale;
            // Dantzig pricing; Bland's first-index rule after a run of degenerate pivots
            let bland = degenerate_run > m + n;
            'scan: for i in 0..m {
                for j in 0..n {
                    let r = cost[i * n + j] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((p, q)) = entering else { return Ok(()) };
            // cycle: entering (+), then alternating −, +, … along the tree path
            // from column q to row p
            let path = self.tree_path(&adj, p, q);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 && self.basis[k].2 < theta {
                    theta = self.basis[k].2;
                    leave = k;
                }
            }
            let theta = theta.max(0.0);
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].2 -= theta;
                } else {
                    self.basis[k].2 += theta;
                }
            }
            self.basis[leave] = (p, q, theta);
        }
        Err(Error::Degenerate("transportation simplex did not converge".into()))
    }
}
