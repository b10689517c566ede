//! Adapted empirical measures (per-time k-means scenario trees), the nested
//! AW₁ by backward induction, and its sliced average.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bruteforce::DiscreteMeasure;
use super::ot::discrete_ot;
use crate::error::{Error, Result};
use crate::path_data::PathSet;
use crate::rng::{self, Rng};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub center: Vec<f64>,
    /// Absolute mass of the node.
    pub mass: f64,
    pub children: Vec<usize>,
}

/// Scenario tree: `levels[t]` holds the nodes at time `t`; the nodes at time 0
/// are the children of an implicit root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedTree {
    pub levels: Vec<Vec<TreeNode>>,
    pub dim: usize,
    /// Times at which fewer distinct values than requested clusters were found.
    pub warnings: Vec<String>,
}

impl AdaptedTree {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Builds the tree from per-path label sequences and per-time centers.
    fn from_labels(labels: &[Vec<usize>], centers: &[Vec<Vec<f64>>], weights: &[f64], dim: usize) -> Self {
        let t_len = centers.len();
        let mut levels: Vec<Vec<TreeNode>> = vec![Vec::new(); t_len];
        let mut index: Vec<HashMap<(usize, usize), usize>> = vec![HashMap::new(); t_len];
        for (p, w) in labels.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            let mut parent = usize::MAX;
            for t in 0..t_len {
                let key = (parent, p[t]);
                let id = match index[t].get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = levels[t].len();
                        levels[t].push(TreeNode { center: centers[t][p[t]].clone(), mass: 0.0, children: Vec::new() });
                        index[t].insert(key, id);
                        if t > 0 {
                            levels[t - 1][parent].children.push(id);
                        }
                        id
                    }
                };
                levels[t][id].mass += w;
                parent = id;
            }
        }
        Self { levels, dim, warnings: Vec::new() }
    }

    /// Tree whose node centers are the exact atom values of `mu`.
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        let t_len = mu.t_len;
        let mut centers: Vec<Vec<Vec<f64>>> = vec![Vec::new(); t_len];
        let mut ids: Vec<HashMap<Vec<u64>, usize>> = vec![HashMap::new(); t_len];
        let labels: Vec<Vec<usize>> = (0..mu.len())
            .map(|i| {
                let a = mu.atom(i);
                (0..t_len)
                    .map(|t| {
                        let v = &a[t * mu.dim..(t + 1) * mu.dim];
                        let key: Vec<u64> = v.iter().map(|x| (x + 0.0).to_bits()).collect();
                        let n = ids[t].len();
                        *ids[t].entry(key).or_insert_with(|| {
                            centers[t].push(v.to_vec());
                            n
                        })
                    })
                    .collect()
            })
            .collect();
        Self::from_labels(&labels, &centers, &mu.weights, mu.dim)
    }

    /// Leaf paths with their masses, as a discrete measure.
    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        let mut support = Vec::new();
        let mut weights = Vec::new();
        let mut stack: Vec<(usize, usize, Vec<f64>)> =
            (0..self.levels[0].len()).rev().map(|i| (0, i, self.levels[0][i].center.clone())).collect();
        while let Some((t, i, prefix)) = stack.pop() {
            let node = &self.levels[t][i];
            if t + 1 == self.depth() {
                support.extend(prefix);
                weights.push(node.mass);
                continue;
            }
            for &c in node.children.iter().rev() {
                let mut p = prefix.clone();
                p.extend_from_slice(&self.levels[t + 1][c].center);
                stack.push((t + 1, c, p));
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        DiscreteMeasure::new(support, weights, self.depth(), self.dim)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn distinct_count(points: &[&[f64]]) -> usize {
    let mut seen = std::collections::HashSet::new();
    for p in points {
        seen.insert(p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>());
    }
    seen.len()
}

/// K-means (k-means++ seeding, Lloyd iterations). Returns centers and labels.
pub fn kmeans(points: &[&[f64]], k: usize, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = points.len();
    let k = k.min(distinct_count(points)).max(1);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        // guard against landing on an existing center through round-off
        if d2[pick] == 0.0 {
            pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive total");
        }
        centers.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().expect("non-empty")));
        }
    }
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq_dist(p, ctr);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect()
    };
    let dim = points[0].len();
    let mut labels = assign(&centers);
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        let mut moved = 0.0f64;
        for c in 0..centers.len() {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(sq_dist(&new, &centers[c]).sqrt());
            centers[c] = new;
        }
        labels = assign(&centers);
        if moved < KMEANS_TOL {
            break;
        }
    }
    (centers, labels)
}

/// Default clusters per time: `⌈√n⌉`.
pub fn default_clusters(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Per-time k-means on the time-`t` values; each path becomes its sequence of
/// centers and the tree carries the path counts.
pub fn adapted_empirical(x: &PathSet, clusters_per_time: usize, seed: u64) -> Result<AdaptedTree> {
    if clusters_per_time == 0 {
        return Err(Error::Parameter("clusters_per_time must be >= 1".into()));
    }
    let (n, t_len, dim) = (x.n_paths, x.n_steps, x.dim);
    let mut centers = Vec::with_capacity(t_len);
    let mut labels = vec![vec![0usize; t_len]; n];
    let mut warnings = Vec::new();
    for t in 0..t_len {
        let pts: Vec<&[f64]> = (0..n).map(|i| &x.path(i)[t * dim..(t + 1) * dim]).collect();
        let distinct = distinct_count(&pts);
        if distinct < clusters_per_time {
            warnings.push(format!("time {t}: {distinct} distinct values, using {distinct} clusters instead of {clusters_per_time}"));
        }
        let mut r = rng::stream(seed, t as u64);
        let (c, l) = kmeans(&pts, clusters_per_time, &mut r);
        for i in 0..n {
            labels[i][t] = l[i];
        }
        centers.push(c);
    }
    let w = vec![1.0 / n as f64; n];
    let mut tree = AdaptedTree::from_labels(&labels, &centers, &w, dim);
    tree.warnings = warnings;
    Ok(tree)
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Nested AW₁ by backward induction over the two trees.
pub fn aw1_nested(a: &AdaptedTree, b: &AdaptedTree) -> Result<f64> {
    if a.depth() != b.depth() {
        return Err(Error::Shape(format!("tree depths differ: {} vs {}", a.depth(), b.depth())));
    }
    if a.depth() == 0 {
        return Ok(0.0);
    }
    let t_len = a.depth();
    // value[i * nb + j] for node pair (i, j) at the current time
    let mut next: Vec<f64> = Vec::new();
    let mut next_nb = 0;
    for t in (0..t_len).rev() {
        let (la, lb) = (&a.levels[t], &b.levels[t]);
        let nb = lb.len();
        let rows: Vec<Result<Vec<f64>>> = la
            .par_iter()
            .map(|na| {
                lb.iter()
                    .map(|nbn| {
                        let here = norm_diff(&na.center, &nbn.center);
                        if t + 1 == t_len {
                            return Ok(here);
                        }
                        let sub = |i: usize, j: usize| next[i * next_nb + j];
                        let wa: Vec<f64> = na.children.iter().map(|&c| a.levels[t + 1][c].mass / na.mass).collect();
                        let wb: Vec<f64> = nbn.children.iter().map(|&c| b.levels[t + 1][c].mass / nbn.mass).collect();
                        let cont = if na.children.len() == 1 {
                            nbn.children.iter().zip(&wb).map(|(&j, w)| w * sub(na.children[0], j)).sum()
                        } else if nbn.children.len() == 1 {
                            na.children.iter().zip(&wa).map(|(&i, w)| w * sub(i, nbn.children[0])).sum()
                        } else {
                            let cost: Vec<f64> =
                                na.children.iter().flat_map(|&i| nbn.children.iter().map(move |&j| (i, j))).map(|(i, j)| sub(i, j)).collect();
                            discrete_ot(&cost, &wa, &wb)?.value
                        };
                        Ok(here + cont)
                    })
                    .collect()
            })
            .collect();
        let mut cur = Vec::with_capacity(la.len() * nb);
        for r in rows {
            cur.extend(r?);
        }
        next = cur;
        next_nb = nb;
    }
    let wa: Vec<f64> = a.levels[0].iter().map(|n| n.mass).collect();
    let wb: Vec<f64> = b.levels[0].iter().map(|n| n.mass).collect();
    let (sa, sb) = (wa.iter().sum::<f64>(), wb.iter().sum::<f64>());
    let wa: Vec<f64> = wa.iter().map(|w| w / sa).collect();
    let wb: Vec<f64> = wb.iter().map(|w| w / sb).collect();
    Ok(discrete_ot(&next, &wa, &wb)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicedAwConfig {
    pub n_len: usize,
    pub n_slice: usize,
    pub n_sample: usize,
    /// `None` uses `⌈√n_sample⌉`.
    pub clusters_per_time: Option<usize>,
}

impl Default for SlicedAwConfig {
    fn default() -> Self {
        Self { n_len: 5, n_slice: 100, n_sample: 500, clusters_per_time: None }
    }
}

fn restrict(x: &PathSet, rows: &[usize], times: &[usize]) -> Result<PathSet> {
    let d = x.dim;
    let mut values = Vec::with_capacity(rows.len() * times.len() * d);
    for &i in rows {
        let p = x.path(i);
        for &t in times {
            values.extend_from_slice(&p[t * d..(t + 1) * d]);
        }
    }
    PathSet::new(values, rows.len(), times.len(), d, x.dt)
}

/// Average AW₁ over random sorted time subsets of size `n_len`, each on
/// `n_sample` subsampled paths. Returns `(mean, std)` over slices.
pub fn sliced_aw1(x: &PathSet, y: &PathSet, cfg: &SlicedAwConfig, seed: u64) -> Result<(f64, f64)> {
    if x.n_steps != y.n_steps || x.dim != y.dim {
        return Err(Error::Shape("path sets differ in length or channels".into()));
    }
    if cfg.n_len == 0 || cfg.n_len > x.n_steps {
        return Err(Error::Parameter(format!("n_len must be in 1..={}, got {}", x.n_steps, cfg.n_len)));
    }
    if cfg.n_slice == 0 || cfg.n_sample == 0 || cfg.clusters_per_time == Some(0) {
        return Err(Error::Parameter("n_slice, n_sample and clusters_per_time must be >= 1".into()));
    }
    let vals: Vec<f64> = (0..cfg.n_slice)
        .map(|s| {
            let slice_seed = rng::mix(seed, s as u64);
            let mut r = rng::stream(slice_seed, 0);
            let mut times = index::sample(&mut r, x.n_steps, cfg.n_len).into_vec();
            times.sort_unstable();
            let pick = |n: usize| {
                let mut r = rng::stream(slice_seed, 1);
                let mut rows = index::sample(&mut r, n, cfg.n_sample.min(n)).into_vec();
                rows.sort_unstable();
                rows
            };
            let xs = restrict(x, &pick(x.n_paths), &times)?;
            let ys = restrict(y, &pick(y.n_paths), &times)?;
            let k = cfg.clusters_per_time.unwrap_or_else(|| default_clusters(cfg.n_sample.min(x.n_paths).min(y.n_paths)));
            let ta = adapted_empirical(&xs, k, rng::mix(slice_seed, 2))?;
            let tb = adapted_empirical(&ys, k, rng::mix(slice_seed, 2))?;
            aw1_nested(&ta, &tb)
        })
        .collect::<Result<_>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
