//! Return statistics for the stylized-facts battery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
    /// `acf_r[k-1]` is the lag-`k` autocorrelation of returns.
    pub acf_r: Vec<f64>,
    pub acf_r2: Vec<f64>,
    pub acf_abs: Vec<f64>,
    /// Hill estimate of the loss tail index on the top 5% of losses.
    pub hill_tail_index: Option<f64>,
}

/// Sample autocorrelation at lags `1..=max_lag` (full-sample mean and variance).
///
/// A series that is constant up to round-off gets all-zero autocorrelations.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var: f64 = c.iter().map(|v| v * v).sum();
    let level: f64 = x.iter().map(|v| v * v).sum();
    if !(var > 1e-24 * level) || var == 0.0 {
        return vec![0.0; max_lag];
    }
    (1..=max_lag).map(|k| if k >= n { 0.0 } else { c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / var }).collect()
}

/// Hill estimator `1 / mean(log(L_(i) / L_(k)))` over the `k` largest losses.
pub fn hill_estimator(losses: &[f64], frac: f64) -> Option<f64> {
    let mut l: Vec<f64> = losses.iter().copied().filter(|v| *v > 0.0).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    let k = ((losses.len() as f64 * frac).floor() as usize).max(2);
    if l.len() <= k {
        return None;
    }
    let thr = l[k];
    let mean = l[..k].iter().map(|v| (v / thr).ln()).sum::<f64>() / k as f64;
    (mean > 0.0).then(|| 1.0 / mean)
}

pub fn stylized_stats(returns: &[f64], max_lag: usize) -> Result<StylizedReport> {
    let n = returns.len();
    if n <= max_lag + 2 {
        return Err(Error::Length(format!("need more than {} returns, got {n}", max_lag + 2)));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("returns contain non-finite values".into()));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let m2 = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("constant return series".into()));
    }
    let m3 = returns.iter().map(|r| (r - mean).powi(3)).sum::<f64>() / n as f64;
    let m4 = returns.iter().map(|r| (r - mean).powi(4)).sum::<f64>() / n as f64;
    let sq: Vec<f64> = returns.iter().map(|r| r * r).collect();
    let abs: Vec<f64> = returns.iter().map(|r| r.abs()).collect();
    let losses: Vec<f64> = returns.iter().map(|r| -r).collect();
    Ok(StylizedReport {
        n,
        mean,
        std: m2.sqrt(),
        skew: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        acf_r: acf(returns, max_lag),
        acf_r2: acf(&sq, max_lag),
        acf_abs: acf(&abs, max_lag),
        hill_tail_index: hill_estimator(&losses, 0.05),
    })
}
