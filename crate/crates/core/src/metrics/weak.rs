//! Distances that only see the joint law of paths: 1-D / sliced W₁ and MMDs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::path_data::PathSet;
use crate::rng;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact W₁ between two empirical measures on ℝ.
///
/// Integrates `|F_a⁻¹(u) − F_b⁻¹(u)|` over the merged breakpoints `i/n ∪ j/m`;
/// for equal counts this is the mean absolute difference of order statistics.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Length("w1_1d needs nonempty samples".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len(), b.len());
    if n == m {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64);
    }
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        acc += (next - u) * (a[i] - b[j]).abs();
        u = next;
        // integer comparison avoids drift in the breakpoints
        match ((i + 1) * m).cmp(&((j + 1) * n)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    Ok(acc)
}

fn check_dims(x: &PathSet, y: &PathSet) -> Result<()> {
    if x.path_len() != y.path_len() {
        return Err(Error::Shape(format!("path dims differ: {} vs {}", x.path_len(), y.path_len())));
    }
    Ok(())
}

/// Uniform unit direction in `ℝ^dim`.
fn direction(seed: u64, k: usize, dim: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, k as u64);
    loop {
        let v = rng::normals(&mut r, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn project(x: &PathSet, u: &[f64]) -> Vec<f64> {
    x.paths().map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
}

/// Mean of `w1_1d` over `n_proj` random projections of the flattened paths.
pub fn sliced_w1(x: &PathSet, y: &PathSet, n_proj: usize, seed: u64) -> Result<f64> {
    check_dims(x, y)?;
    if n_proj == 0 {
        return Err(Error::Parameter("n_proj must be >= 1".into()));
    }
    let dim = x.path_len();
    let vals: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|k| {
            let u = direction(seed, k, dim);
            w1_1d(&project(x, &u), &project(y, &u))
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / n_proj as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of pooled pairwise distances.
    Median,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Median pairwise Euclidean distance over the pooled sample (distinct pairs).
pub fn median_distance(pooled: &[&[f64]]) -> f64 {
    let n = pooled.len();
    let mut d: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(pooled[i], pooled[j]).sqrt())
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn kernel_mean(a: &[&[f64]], b: &[&[f64]], gamma: f64) -> f64 {
    // rows are collected before summing so the result is independent of scheduling
    let rows: Vec<f64> = a.par_iter().map(|x| b.iter().map(|y| (-gamma * sq_dist(x, y)).exp()).sum::<f64>()).collect();
    rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) MMD with `k(x, y) = exp(−‖x − y‖² / 2h²)`,
/// floored at 0 and square-rooted.
pub fn gaussian_mmd(x: &PathSet, y: &PathSet, bandwidth: Bandwidth) -> Result<f64> {
    check_dims(x, y)?;
    let xs: Vec<&[f64]> = x.paths().collect();
    let ys: Vec<&[f64]> = y.paths().collect();
    gaussian_mmd_points(&xs, &ys, bandwidth)
}

pub fn gaussian_mmd_points(xs: &[&[f64]], ys: &[&[f64]], bandwidth: Bandwidth) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Length("mmd needs nonempty samples".into()));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => {
            let pooled: Vec<&[f64]> = xs.iter().chain(ys).copied().collect();
            median_distance(&pooled)
        }
    };
    if !(h > 0.0) {
        // all points coincide: the kernel is constant and the MMD vanishes
        return Ok(0.0);
    }
    let gamma = 1.0 / (2.0 * h * h);
    let kxx = kernel_mean(xs, xs, gamma);
    let kyy = kernel_mean(ys, ys, gamma);
    let kxy = kernel_mean(xs, ys, gamma);
    let kyx = kernel_mean(ys, xs, gamma);
    Ok(((kxx + kyy) - (kxy + kyx)).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w1_examples() {
        assert_eq!(w1_1d(&[0.3, 1.0], &[1.0, 0.3]).unwrap(), 0.0);
        assert_eq!(w1_1d(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(w1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_counts() {
        // δ₀ vs ½δ₀ + ½δ₁ → ½
        assert!((w1_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        // {0,1,2} vs {0,2}: quantiles differ by 1 on (1/3, 1/2) and (1/2, 2/3)
        assert!((w1_1d(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mmd_point_masses() {
        let x = PathSet::new(vec![0.0; 3], 3, 1, 1, 1.0).unwrap();
        let c: f64 = 0.7;
        let h: f64 = 0.5;
        let y = PathSet::new(vec![c; 2], 2, 1, 1, 1.0).unwrap();
        let m = gaussian_mmd(&x, &y, Bandwidth::Fixed(h)).unwrap();
        let want = 2.0 * (1.0 - (-c * c / (2.0 * h * h)).exp());
        assert!((m * m - want).abs() < 1e-14);
        assert_eq!(gaussian_mmd(&x, &x, Bandwidth::Median).unwrap(), 0.0);
    }

    #[test]
    fn median_of_pairs() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![3.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        // distances 1, 3, 2
        assert_eq!(median_distance(&refs), 2.0);
    }
}
