//! Exact causal / bicausal transport on tiny discrete measures, by LP over the
//! coupling polytope, and the distance-chain checker built on it.

use std::collections::{BTreeMap, HashMap};

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_data::PathSet;

/// Largest number of time points accepted by the LP oracles.
pub const MAX_T: usize = 3;
/// Largest number of atoms per measure accepted by the LP oracles.
pub const MAX_ATOMS: usize = 12;

/// Weighted atoms in `ℝ^{T×d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    /// Row-major `[k × T × d]`.
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub t_len: usize,
    pub dim: usize,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<f64>, weights: Vec<f64>, t_len: usize, dim: usize) -> Result<Self> {
        let k = weights.len();
        if k == 0 || t_len == 0 || dim == 0 {
            return Err(Error::Length("measure needs at least one atom, time point and channel".into()));
        }
        if support.len() != k * t_len * dim {
            return Err(Error::Shape(format!("support has {} values, expected {k}×{t_len}×{dim}", support.len())));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("support contains non-finite values".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {s}, not 1")));
        }
        Ok(Self { support, weights, t_len, dim })
    }

    /// Uniform weights on the paths of `set`.
    pub fn empirical(set: &PathSet) -> Result<Self> {
        let w = vec![1.0 / set.n_paths as f64; set.n_paths];
        Self::new(set.values.clone(), w, set.n_steps, set.dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn path_len(&self) -> usize {
        self.t_len * self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let l = self.path_len();
        &self.support[i * l..(i + 1) * l]
    }

    /// Merges identical atoms and drops zero-weight ones.
    pub fn merged(&self) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut support = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for i in 0..self.len() {
            if self.weights[i] == 0.0 {
                continue;
            }
            let key = bits(self.atom(i));
            match index.get(&key) {
                Some(&k) => weights[k] += self.weights[i],
                None => {
                    index.insert(key, weights.len());
                    support.extend_from_slice(self.atom(i));
                    weights.push(self.weights[i]);
                }
            }
        }
        Self { support, weights, t_len: self.t_len, dim: self.dim }
    }

    /// Mass this measure puts on `point` (exact match).
    pub fn mass_at(&self, point: &[f64]) -> f64 {
        let key = bits(point);
        (0..self.len()).filter(|&i| bits(self.atom(i)) == key).map(|i| self.weights[i]).sum()
    }

    /// Class id of each atom under equality of the first `t` time points.
    pub fn prefix_classes(&self, t: usize) -> Vec<usize> {
        let l = t * self.dim;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        (0..self.len())
            .map(|i| {
                let n = index.len();
                *index.entry(bits(&self.atom(i)[..l])).or_insert(n)
            })
            .collect()
    }
}

fn bits(x: &[f64]) -> Vec<u64> {
    // + 0.0 folds −0 into +0
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// `Σ_t ‖x_t − y_t‖` for flat `[T × d]` paths.
pub fn path_cost(x: &[f64], y: &[f64], dim: usize) -> f64 {
    x.chunks(dim).zip(y.chunks(dim)).map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()).sum()
}

/// `Σ_t ‖x_t‖`.
pub fn path_norm(x: &[f64], dim: usize) -> f64 {
    x.chunks(dim).map(|a| a.iter().map(|p| p * p).sum::<f64>().sqrt()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    Unconstrained,
    /// Causal from the first measure to the second.
    Causal,
    Bicausal,
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.t_len != nu.t_len || mu.dim != nu.dim {
        return Err(Error::Shape(format!(
            "measures live on different spaces ({}×{} vs {}×{})",
            mu.t_len, mu.dim, nu.t_len, nu.dim
        )));
    }
    if mu.t_len > MAX_T || mu.len() > MAX_ATOMS || nu.len() > MAX_ATOMS {
        return Err(Error::InstanceTooLarge(format!(
            "LP oracle handles T ≤ {MAX_T} and ≤ {MAX_ATOMS} atoms per measure (got T = {}, {} and {} atoms)",
            mu.t_len,
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// Conditional-independence rows: the next step of `side` given both
/// prefixes has the law of `side` given its own prefix.
fn causal_rows(side: &DiscreteMeasure, other: &DiscreteMeasure, var: &dyn Fn(usize, usize) -> usize) -> Vec<BTreeMap<usize, f64>> {
    let mut rows = Vec::new();
    for t in 1..side.t_len {
        let a_of = side.prefix_classes(t);
        let c_of = side.prefix_classes(t + 1);
        let b_of = other.prefix_classes(t);
        let n_a = a_of.iter().max().map_or(0, |m| m + 1);
        let n_b = b_of.iter().max().map_or(0, |m| m + 1);
        let mut mass_a = vec![0.0; n_a];
        let mut mass_c: BTreeMap<usize, f64> = BTreeMap::new();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_a];
        for i in 0..side.len() {
            mass_a[a_of[i]] += side.weights[i];
            *mass_c.entry(c_of[i]).or_default() += side.weights[i];
            if !children[a_of[i]].contains(&c_of[i]) {
                children[a_of[i]].push(c_of[i]);
            }
        }
        for a in 0..n_a {
            if children[a].len() < 2 {
                continue;
            }
            for &c in &children[a] {
                let r = mass_c[&c] / mass_a[a];
                for b in 0..n_b {
                    let mut row = BTreeMap::new();
                    for i in (0..side.len()).filter(|&i| a_of[i] == a) {
                        let coef = if c_of[i] == c { 1.0 - r } else { -r };
                        for j in (0..other.len()).filter(|&j| b_of[j] == b) {
                            *row.entry(var(i, j)).or_insert(0.0) += coef;
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    rows
}

/// Minimizes `E_π[cost(x, y)]` over couplings of `mu` and `nu` in `mode`.
pub fn coupling_lp(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &dyn Fn(&[f64], &[f64]) -> f64,
    mode: CouplingMode,
) -> Result<f64> {
    check_pair(mu, nu)?;
    let (mu, nu) = (mu.merged(), nu.merged());
    let (m, n) = (mu.len(), nu.len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars: Vec<Variable> = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            vars.push(lp.add_var(cost(mu.atom(i), nu.atom(j)), (0.0, f64::INFINITY)));
        }
    }
    for i in 0..m {
        lp.add_constraint((0..n).map(|j| (vars[i * n + j], 1.0)).collect::<LinearExpr>(), ComparisonOp::Eq, mu.weights[i]);
    }
    for j in 0..n {
        lp.add_constraint((0..m).map(|i| (vars[i * n + j], 1.0)).collect::<LinearExpr>(), ComparisonOp::Eq, nu.weights[j]);
    }
    let mut rows = Vec::new();
    if mode != CouplingMode::Unconstrained {
        rows.extend(causal_rows(&mu, &nu, &|i, j| i * n + j));
    }
    if mode == CouplingMode::Bicausal {
        rows.extend(causal_rows(&nu, &mu, &|j, i| i * n + j));
    }
    for row in rows {
        let expr: LinearExpr = row.into_iter().filter(|(_, c)| *c != 0.0).map(|(k, c)| (vars[k], c)).collect();
        lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
    }
    let sol = lp.solve().map_err(|e| Error::Infeasible(format!("coupling LP: {e}")))?;
    Ok(sol.objective())
}

/// Exact CW₁ / AW₁ / W₁ with cost `Σ_t ‖x_t − y_t‖`.
pub fn cw1_aw1_bruteforce(mu: &DiscreteMeasure, nu: &DiscreteMeasure, mode: CouplingMode) -> Result<f64> {
    let dim = mu.dim;
    coupling_lp(mu, nu, &|x, y| path_cost(x, y, dim), mode)
}

/// `½ Σ |μ(x) − ν(x)|` over the union of supports.
pub fn total_variation(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let (mu, nu) = (mu.merged(), nu.merged());
    let mut tv = 0.0;
    for i in 0..mu.len() {
        tv += (mu.weights[i] - nu.mass_at(mu.atom(i))).abs();
    }
    for j in 0..nu.len() {
        if mu.mass_at(nu.atom(j)) == 0.0 {
            tv += nu.weights[j];
        }
    }
    0.5 * tv
}

/// `Σ μ log(μ/ν)`; infinite when `mu` charges a point `nu` does not.
pub fn kl_divergence(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let (mu, nu) = (mu.merged(), nu.merged());
    let mut kl = 0.0;
    for i in 0..mu.len() {
        let q = nu.mass_at(mu.atom(i));
        if q == 0.0 {
            return f64::INFINITY;
        }
        kl += mu.weights[i] * (mu.weights[i] / q).ln();
    }
    kl.max(0.0)
}

/// The five quantities of the distance chain for one pair of measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub cw1: f64,
    pub aw1: f64,
    pub two_av0: f64,
    pub c_tv0: f64,
    /// `C·√(KL/2)`; infinite when KL is.
    pub c_sqrt_kl: f64,
    pub holds: bool,
}

impl ChainReport {
    pub fn values(&self) -> [f64; 5] {
        [self.cw1, self.aw1, self.two_av0, self.c_tv0, self.c_sqrt_kl]
    }

    /// Indices `k` where `values[k] > values[k+1] + tol`.
    pub fn violations(&self, tol: f64) -> Vec<usize> {
        let v = self.values();
        (0..4).filter(|&k| v[k] > v[k + 1] + tol).collect()
    }

    pub fn kl_finite(&self) -> bool {
        self.c_sqrt_kl.is_finite()
    }
}

/// Tolerance used for the chain verdict; absorbs LP round-off.
pub const CHAIN_TOL: f64 = 1e-9;

/// `CW₁ ≤ AW₁ ≤ 2AV₀ ≤ C·TV₀ ≤ C·√(KL/2)`, `C = 2(2^T − 1)`.
///
/// Supports must lie in the unit ball of the cost norm `Σ_t ‖x_t‖ ≤ 1`.
pub fn lemma_chain_check(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ChainReport> {
    check_pair(mu, nu)?;
    for m in [mu, nu] {
        for i in 0..m.len() {
            let r = path_norm(m.atom(i), m.dim);
            if r > 1.0 + 1e-12 {
                return Err(Error::Domain(format!("atom {i} has norm {r} > 1")));
            }
        }
    }
    let c = crate::tcvae::cw1_constant(mu.t_len);
    let cw1 = cw1_aw1_bruteforce(mu, nu, CouplingMode::Causal)?;
    let aw1 = cw1_aw1_bruteforce(mu, nu, CouplingMode::Bicausal)?;
    let av0 = coupling_lp(mu, nu, &|x, y| if bits(x) == bits(y) { 0.0 } else { 1.0 }, CouplingMode::Bicausal)?;
    let tv0 = total_variation(mu, nu);
    let kl = kl_divergence(mu, nu);
    let mut report =
        ChainReport { cw1, aw1, two_av0: 2.0 * av0, c_tv0: c * tv0, c_sqrt_kl: c * (kl / 2.0).sqrt(), holds: false };
    report.holds = report.violations(CHAIN_TOL).is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pflug() -> (DiscreteMeasure, DiscreteMeasure) {
        let mu = DiscreteMeasure::new(vec![0.0, 1.0, 0.0, -1.0], vec![0.5, 0.5], 2, 1).unwrap();
        let nu = DiscreteMeasure::new(vec![0.1, 1.0, -0.1, -1.0], vec![0.5, 0.5], 2, 1).unwrap();
        (mu, nu)
    }

    #[test]
    fn pflug_pair() {
        let (mu, nu) = pflug();
        let w = cw1_aw1_bruteforce(&mu, &nu, CouplingMode::Unconstrained).unwrap();
        let a = cw1_aw1_bruteforce(&mu, &nu, CouplingMode::Bicausal).unwrap();
        let c = cw1_aw1_bruteforce(&mu, &nu, CouplingMode::Causal).unwrap();
        assert!((w - 0.1).abs() < 1e-9);
        assert!((a - 1.1).abs() < 1e-9);
        assert!(c >= w - 1e-9 && c <= a + 1e-9);
        // X₁ is deterministic, so causality from μ already forces independence
        assert!((c - 1.1).abs() < 1e-9);
        // the other direction may use Y₁ to route X₂
        let back = cw1_aw1_bruteforce(&nu, &mu, CouplingMode::Causal).unwrap();
        assert!((back - 0.1).abs() < 1e-9);
    }

    #[test]
    fn identical_measures_zero() {
        let (mu, _) = pflug();
        for mode in [CouplingMode::Unconstrained, CouplingMode::Causal, CouplingMode::Bicausal] {
            assert!(cw1_aw1_bruteforce(&mu, &mu, mode).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn too_large() {
        let w = vec![0.25; 4];
        let mu = DiscreteMeasure::new(vec![0.0; 16], w, 4, 1).unwrap();
        assert!(matches!(cw1_aw1_bruteforce(&mu, &mu, CouplingMode::Causal), Err(Error::InstanceTooLarge(_))));
    }

    #[test]
    fn chain_identical_zero() {
        let mu = DiscreteMeasure::new(vec![0.1, 0.2, -0.3, 0.4], vec![0.3, 0.7], 2, 1).unwrap();
        let r = lemma_chain_check(&mu, &mu).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-12));
        assert!(r.holds);
    }

    #[test]
    fn chain_disjoint() {
        let mu = DiscreteMeasure::new(vec![0.1, 0.2, -0.3, 0.4], vec![0.3, 0.7], 2, 1).unwrap();
        let nu = DiscreteMeasure::new(vec![0.5, 0.0, -0.2, -0.2], vec![0.5, 0.5], 2, 1).unwrap();
        let r = lemma_chain_check(&mu, &nu).unwrap();
        assert_eq!(total_variation(&mu, &nu), 1.0);
        assert!(!r.kl_finite());
        assert!(r.aw1 <= 2.0 + 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn chain_rejects_outside_ball() {
        let mu = DiscreteMeasure::new(vec![0.8, 0.8], vec![1.0], 2, 1).unwrap();
        assert!(lemma_chain_check(&mu, &mu).is_err());
    }
}
