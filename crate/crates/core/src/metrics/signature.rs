//! Truncated path signatures via Chen's identity, and the signature MMD.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::path_data::PathSet;

/// Upper bound on the number of signature coordinates.
pub const MAX_SIG_DIM: usize = 1 << 22;

/// Truncated tensor-algebra element; `levels[k]` has `d^k` entries (`levels[0] = [1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    pub dim: usize,
    pub levels: Vec<Vec<f64>>,
}

impl TruncatedTensor {
    pub fn one(dim: usize, level: usize) -> Self {
        let mut levels = vec![vec![1.0]];
        for k in 1..=level {
            levels.push(vec![0.0; dim.pow(k as u32)]);
        }
        Self { dim, levels }
    }

    pub fn level(&self) -> usize {
        self.levels.len() - 1
    }

    /// `exp(Δ)` truncated: level `k` is `Δ^{⊗k} / k!`.
    pub fn exp(delta: &[f64], level: usize) -> Self {
        let dim = delta.len();
        let mut levels = vec![vec![1.0]];
        for k in 1..=level {
            let prev = &levels[k - 1];
            let mut next = Vec::with_capacity(prev.len() * dim);
            for p in prev {
                for d in delta {
                    next.push(p * d / k as f64);
                }
            }
            levels.push(next);
        }
        Self { dim, levels }
    }

    /// Truncated tensor product `self ⊗ other`.
    pub fn mul(&self, other: &Self) -> Self {
        let level = self.level().min(other.level());
        let mut out = Self::one(self.dim, level);
        for k in 1..=level {
            let o = &mut out.levels[k];
            for i in 0..=k {
                let (a, b) = (&self.levels[i], &other.levels[k - i]);
                let nb = b.len();
                for (ia, va) in a.iter().enumerate() {
                    if *va == 0.0 {
                        continue;
                    }
                    let row = &mut o[ia * nb..(ia + 1) * nb];
                    row.iter_mut().zip(b).for_each(|(r, vb)| *r += va * vb);
                }
            }
        }
        out
    }

    /// Levels `1..=level`, concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels[1..].concat()
    }
}

/// Number of signature coordinates for `dim` channels up to `level`.
pub fn signature_dim(dim: usize, level: usize) -> usize {
    (1..=level).map(|k| dim.saturating_pow(k as u32)).fold(0usize, |a, b| a.saturating_add(b))
}

/// Signature tensor of the piecewise-linear path through the rows of `path`
/// (`[T × d]`), optionally with a time channel `t/(T−1)` prepended.
pub fn signature_tensor(path: &[f64], dim: usize, level: usize, time_augment: bool) -> Result<TruncatedTensor> {
    if level == 0 {
        return Err(Error::Parameter("signature level must be >= 1".into()));
    }
    if dim == 0 || path.is_empty() || path.len() % dim != 0 {
        return Err(Error::Shape(format!("path of {} values is not a [T × {dim}] array", path.len())));
    }
    let t_len = path.len() / dim;
    let d = dim + usize::from(time_augment);
    if signature_dim(d, level) > MAX_SIG_DIM {
        return Err(Error::Parameter(format!("signature of level {level} on {d} channels exceeds the memory budget")));
    }
    let mut sig = TruncatedTensor::one(d, level);
    let dt = if t_len > 1 { 1.0 / (t_len - 1) as f64 } else { 0.0 };
    let mut delta = vec![0.0; d];
    for t in 1..t_len {
        let (a, b) = (&path[(t - 1) * dim..t * dim], &path[t * dim..(t + 1) * dim]);
        let off = usize::from(time_augment);
        if time_augment {
            delta[0] = dt;
        }
        for c in 0..dim {
            delta[off + c] = b[c] - a[c];
        }
        sig = sig.mul(&TruncatedTensor::exp(&delta, level));
    }
    Ok(sig)
}

/// Flattened levels `1..=level` of the signature.
pub fn signature(path: &[f64], dim: usize, level: usize, time_augment: bool) -> Result<Vec<f64>> {
    Ok(signature_tensor(path, dim, level, time_augment)?.flatten())
}

/// Mean time-augmented signature of a path set.
pub fn mean_signature(x: &PathSet, level: usize) -> Result<Vec<f64>> {
    let sigs: Vec<Vec<f64>> = x.paths().collect::<Vec<_>>().par_iter().map(|p| signature(p, x.dim, level, true)).collect::<Result<_>>()?;
    let mut mean = vec![0.0; sigs[0].len()];
    for s in &sigs {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    let n = sigs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Linear-kernel MMD on time-augmented signatures; equal to the distance
/// between mean signatures.
pub fn signature_mmd(x: &PathSet, y: &PathSet, level: usize) -> Result<f64> {
    if x.dim != y.dim {
        return Err(Error::Shape(format!("channel counts differ: {} vs {}", x.dim, y.dim)));
    }
    let (mx, my) = (mean_signature(x, level)?, mean_signature(y, level)?);
    Ok(mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_path_levels() {
        let a: f64 = 0.7;
        let s = signature(&[0.2, 0.2 + a], 1, 4, false).unwrap();
        let fact = [1.0, 2.0, 6.0, 24.0];
        for k in 0..4 {
            assert!((s[k] - a.powi(k as i32 + 1) / fact[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_path_zero() {
        let s = signature(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2, 3, false).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_dim() {
        let s = signature(&[0.0, 1.0, 0.5], 1, 4, true).unwrap();
        assert_eq!(s.len(), 2 + 4 + 8 + 16);
        assert!(signature(&[0.0, 1.0], 1, 0, true).is_err());
        assert!(signature(&[0.0; 4], 1, 40, true).is_err());
    }

    #[test]
    fn two_dim_area() {
        // L-shaped path (0,0)→(1,0)→(1,1): level-2 entries are ½, 1, 0, ½
        let s = signature_tensor(&[0.0, 0.0, 1.0, 0.0, 1.0, 1.0], 2, 2, false).unwrap();
        assert_eq!(s.levels[2], vec![0.5, 1.0, 0.0, 0.5]);
    }
}
