//! Downstream evaluators on price paths: self-financing wealth, mean-variance
//! frontiers, log-utility, optimal stopping, AVaR, and exact robustness checks
//! on tiny discrete measures.

use std::collections::{BTreeMap, HashMap};

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cw1_aw1_bruteforce, CouplingMode, DiscreteMeasure};
use crate::path_data::PathSet;

fn prefix_key(prefix: &[f64]) -> Vec<u64> {
    prefix.iter().map(|v| (v + 0.0).to_bits()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    /// Fraction of wealth held in the risky asset at every step.
    Constant(f64),
    /// Fraction keyed by the observed price prefix `S_0..=S_j`.
    Tabular(HashMap<Vec<u64>, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub bound: Option<f64>,
}

impl Strategy {
    pub fn constant(pi: f64) -> Self {
        Self { kind: StrategyKind::Constant(pi), bound: None }
    }

    /// Tabulates `f(prefix)` on every prefix of every path in `paths` (channel 0).
    pub fn tabulate(paths: &PathSet, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut table = HashMap::new();
        for i in 0..paths.n_paths {
            let s = price_channel(paths, i);
            for j in 0..s.len().saturating_sub(1) {
                table.entry(prefix_key(&s[..=j])).or_insert_with(|| f(&s[..=j]));
            }
        }
        Self { kind: StrategyKind::Tabular(table), bound: None }
    }

    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    /// Allocation after observing `prefix` (clipped to the bound).
    pub fn at(&self, prefix: &[f64]) -> Result<f64> {
        let v = match &self.kind {
            StrategyKind::Constant(p) => *p,
            StrategyKind::Tabular(t) => *t
                .get(&prefix_key(prefix))
                .ok_or_else(|| Error::Domain(format!("strategy table has no entry for a prefix of length {}", prefix.len())))?,
        };
        Ok(match self.bound {
            Some(b) => v.clamp(-b, b),
            None => v,
        })
    }
}

fn price_channel(paths: &PathSet, i: usize) -> Vec<f64> {
    let p = paths.path(i);
    (0..paths.n_steps).map(|t| p[t * paths.dim]).collect()
}

/// Terminal wealth per path, with a flag for paths whose wealth hit zero or below.
#[derive(Debug, Clone, PartialEq)]
pub struct Wealth {
    pub terminal: Vec<f64>,
    pub bankrupt: Vec<bool>,
}

impl Wealth {
    pub fn mean(&self) -> f64 {
        self.terminal.iter().sum::<f64>() / self.terminal.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.terminal.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / self.terminal.len() as f64
    }
}

/// `W_{j+1} = W_j (π S_{j+1}/S_j + (1 − π) e^{rΔt})` on channel 0 of each path.
pub fn wealth_terminal(paths: &PathSet, strategy: &Strategy, r: f64, w0: f64) -> Result<Wealth> {
    if !(w0 > 0.0) {
        return Err(Error::Parameter(format!("w0 must be positive, got {w0}")));
    }
    let growth = (r * paths.dt).exp();
    let out: Vec<(f64, bool)> = (0..paths.n_paths)
        .into_par_iter()
        .map(|i| {
            let s = price_channel(paths, i);
            let mut w = w0;
            let mut broke = false;
            for j in 0..s.len() - 1 {
                let pi = strategy.at(&s[..=j])?;
                w *= pi * s[j + 1] / s[j] + (1.0 - pi) * growth;
                broke |= w <= 0.0;
            }
            Ok((w, broke))
        })
        .collect::<Result<_>>()?;
    let (terminal, bankrupt) = out.into_iter().unzip();
    Ok(Wealth { terminal, bankrupt })
}

/// One point of a mean-variance frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    /// Strategy parameter (π, or κ for the optimal family).
    pub param: f64,
    /// Volatility assumed by the strategy (0 for constant proportions).
    pub sigma: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    /// Non-dominated points, variance ascending.
    pub envelope: Vec<FrontierPoint>,
}

/// Upper-left Pareto envelope: points with no other point of lower (or equal)
/// variance and higher mean.
pub fn pareto_envelope(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.variance.total_cmp(&b.variance).then(b.mean.total_cmp(&a.mean)));
    let mut env: Vec<FrontierPoint> = Vec::new();
    for p in sorted {
        if env.last().is_none_or(|l| p.mean > l.mean) {
            env.push(p);
        }
    }
    env
}

pub fn mv_frontier_constant(paths: &PathSet, r: f64, pi_grid: &[f64]) -> Result<Frontier> {
    if pi_grid.is_empty() {
        return Err(Error::Parameter("pi grid is empty".into()));
    }
    let points = pi_grid
        .iter()
        .map(|&pi| {
            let w = wealth_terminal(paths, &Strategy::constant(pi), r, 1.0)?;
            Ok(FrontierPoint { param: pi, sigma: 0.0, mean: w.mean(), variance: w.variance() })
        })
        .collect::<Result<Vec<_>>>()?;
    let envelope = pareto_envelope(&points);
    Ok(Frontier { points, envelope })
}

/// Pre-commitment mean-variance policy for a lognormal one-step model.
///
/// Minimizing `E[(W_N − γ)²]` gives the dollar allocation
/// `u_j = −(E R_e / E R_e²) e^{rΔt} (W_j − γ e^{−r(T − t_j)})` with excess
/// return `R_e = S_{j+1}/S_j − e^{rΔt}`. The target `γ = w0 e^{rT} + 1/(2κq)`,
/// `q = (1 − (E R_e)² / E R_e²)^N`, maximizes `E W − κ Var W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvPolicy {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub kappa: f64,
    pub w0: f64,
}

impl MvPolicy {
    /// `(E R_e, E R_e²)` under the assumed lognormal step.
    pub fn excess_moments(&self) -> (f64, f64) {
        let (m, r, s2, dt) = (self.mu, self.r, self.sigma * self.sigma, self.dt);
        let e1 = (m * dt).exp() - (r * dt).exp();
        let e2 = ((2.0 * m + s2) * dt).exp() - 2.0 * ((m + r) * dt).exp() + (2.0 * r * dt).exp();
        (e1, e2)
    }

    pub fn q(&self) -> f64 {
        let (e1, e2) = self.excess_moments();
        (1.0 - e1 * e1 / e2).powi(self.n_steps as i32)
    }

    pub fn gamma(&self) -> f64 {
        let base = self.w0 * (self.r * self.dt * self.n_steps as f64).exp();
        if self.kappa.is_infinite() {
            base
        } else {
            base + 1.0 / (2.0 * self.kappa * self.q())
        }
    }

    /// Dollar amount in the risky asset at step `j` with wealth `w`.
    pub fn allocation(&self, j: usize, w: f64, gamma: f64) -> f64 {
        let (e1, e2) = self.excess_moments();
        let g = gamma * (-self.r * self.dt * (self.n_steps - j) as f64).exp();
        -(e1 / e2) * (self.r * self.dt).exp() * (w - g)
    }

    pub fn terminal_wealth(&self, prices: &[f64]) -> f64 {
        let gamma = self.gamma();
        let growth = (self.r * self.dt).exp();
        let mut w = self.w0;
        for j in 0..prices.len() - 1 {
            let u = self.allocation(j, w, gamma);
            w = u * prices[j + 1] / prices[j] + (w - u) * growth;
        }
        w
    }
}

/// κ grid used when none is given.
pub const DEFAULT_KAPPAS: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];

/// Applies the optimal policy for each assumed `σ` and `κ` to `paths` and
/// returns all points with their joint envelope.
pub fn mv_frontier_optimal_bs(
    paths: &PathSet,
    mu: f64,
    r: f64,
    sigma_grid: &[f64],
    kappa_grid: &[f64],
) -> Result<Frontier> {
    if sigma_grid.is_empty() || kappa_grid.is_empty() {
        return Err(Error::Parameter("sigma and kappa grids must be nonempty".into()));
    }
    if sigma_grid.iter().any(|s| !(*s > 0.0)) || kappa_grid.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::Parameter("sigma and kappa values must be positive".into()));
    }
    let n_steps = paths.n_steps - 1;
    let mut points = Vec::new();
    for &sigma in sigma_grid {
        for &kappa in kappa_grid {
            let pol = MvPolicy { mu, sigma, r, dt: paths.dt, n_steps, kappa, w0: 1.0 };
            let terminal: Vec<f64> = (0..paths.n_paths).into_par_iter().map(|i| pol.terminal_wealth(&price_channel(paths, i))).collect();
            let w = Wealth { bankrupt: vec![false; terminal.len()], terminal };
            points.push(FrontierPoint { param: kappa, sigma, mean: w.mean(), variance: w.variance() });
        }
    }
    let envelope = pareto_envelope(&points);
    Ok(Frontier { points, envelope })
}

fn interp_variance(env: &[FrontierPoint], m: f64) -> f64 {
    let k = env.partition_point(|p| p.mean < m);
    if k == 0 {
        return env[0].variance;
    }
    if k == env.len() {
        return env[k - 1].variance;
    }
    let (a, b) = (env[k - 1], env[k]);
    a.variance + (b.variance - a.variance) * (m - a.mean) / (b.mean - a.mean)
}

/// `max |σ²_a(m) − σ²_b(m)|` over `n_grid` means spanning the overlap of the
/// two envelopes, with linear interpolation along each.
pub fn envelope_distance(a: &[FrontierPoint], b: &[FrontierPoint], n_grid: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() || n_grid < 2 {
        return Err(Error::Parameter("need nonempty envelopes and at least two grid points".into()));
    }
    let lo = a[0].mean.max(b[0].mean);
    let hi = a[a.len() - 1].mean.min(b[b.len() - 1].mean);
    if !(hi >= lo) {
        return Err(Error::Domain(format!("envelopes have disjoint mean ranges [{lo}, {hi}]")));
    }
    Ok((0..n_grid)
        .map(|k| {
            let m = lo + (hi - lo) * k as f64 / (n_grid - 1) as f64;
            (interp_variance(a, m) - interp_variance(b, m)).abs()
        })
        .fold(0.0, f64::max))
}

/// Sample mean of `log W_T` for constant `π` (−∞ if any path goes bankrupt).
pub fn mean_log_wealth(paths: &PathSet, r: f64, pi: f64) -> Result<f64> {
    let w = wealth_terminal(paths, &Strategy::constant(pi), r, 1.0)?;
    if w.bankrupt.iter().any(|b| *b) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(w.terminal.iter().map(|v| v.ln()).sum::<f64>() / w.terminal.len() as f64)
}

/// Golden-section maximization of the mean log terminal wealth over `π` in `bracket`.
pub fn log_utility_constant(paths: &PathSet, r: f64, bracket: (f64, f64)) -> Result<(f64, f64)> {
    let (mut a, mut b) = bracket;
    if !(b > a) {
        return Err(Error::Parameter(format!("bracket ({a}, {b}) is empty")));
    }
    let f = |pi: f64| mean_log_wealth(paths, r, pi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    if fc == f64::NEG_INFINITY && fd == f64::NEG_INFINITY && f(a)? == f64::NEG_INFINITY && f(b)? == f64::NEG_INFINITY {
        return Err(Error::Domain("every probed strategy goes bankrupt on the sample".into()));
    }
    while b - a > 1e-7 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let pi = 0.5 * (a + b);
    Ok((pi, f(pi)?))
}

/// Discounted exercise reward `g(t, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payoff {
    /// `e^{−rt} (S − K)^+`.
    Call { strike: f64, rate: f64 },
    /// `e^{−rt} (K − S)^+`.
    Put { strike: f64, rate: f64 },
    Constant(f64),
}

impl Payoff {
    pub fn value(&self, t: f64, s: f64) -> f64 {
        match *self {
            Payoff::Call { strike, rate } => (-rate * t).exp() * (s - strike).max(0.0),
            Payoff::Put { strike, rate } => (-rate * t).exp() * (strike - s).max(0.0),
            Payoff::Constant(c) => c,
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Payoff::Call { strike, .. } | Payoff::Put { strike, .. } => strike.abs().max(1e-12),
            Payoff::Constant(_) => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingResult {
    pub value: f64,
    pub stderr: f64,
    /// Steps at which the regression had to fall back to a lower degree.
    pub warnings: Vec<String>,
}

/// Least-squares fit of `y` on `1, x, …, x^deg`; lowers the degree while the
/// normal matrix is not positive definite. Returns fitted values and degree used.
fn fit_poly(x: &[f64], y: &[f64], deg: usize) -> (Vec<f64>, usize) {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
    let z: Vec<f64> = x.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect();
    let mut d = deg.min(n.saturating_sub(1));
    loop {
        let basis = DMatrix::from_fn(n, d + 1, |i, k| z[i].powi(k as i32));
        let yv = DVector::from_column_slice(y);
        let gram = basis.transpose() * &basis;
        let rhs = basis.transpose() * &yv;
        if let Some(ch) = gram.clone().cholesky() {
            let coef = ch.solve(&rhs);
            // reject ill-conditioned fits whose residual equations are not met
            let check = &gram * &coef - &rhs;
            if coef.iter().all(|c| c.is_finite()) && check.norm() <= 1e-6 * (1.0 + rhs.norm()) {
                return ((&basis * coef).iter().copied().collect(), d);
            }
        }
        if d == 0 {
            let mean = y.iter().sum::<f64>() / n as f64;
            return (vec![mean; n], 0);
        }
        d -= 1;
    }
}

/// Longstaff–Schwartz on channel 0: exercise dates are all path times.
pub fn lsmc_optimal_stopping(paths: &PathSet, payoff: &Payoff, basis_degree: usize) -> Result<StoppingResult> {
    let n = paths.n_paths;
    if n < 1000 {
        return Err(Error::Length(format!("LSMC needs at least 1000 paths, got {n}")));
    }
    let s: Vec<Vec<f64>> = (0..n).map(|i| price_channel(paths, i)).collect();
    let n_t = paths.n_steps;
    let dt = paths.dt;
    let mut cash: Vec<f64> = s.iter().map(|p| payoff.value((n_t - 1) as f64 * dt, p[n_t - 1])).collect();
    let mut warnings = Vec::new();
    for j in (1..n_t - 1).rev() {
        let t = j as f64 * dt;
        let itm: Vec<usize> = (0..n).filter(|&i| payoff.value(t, s[i][j]) > 0.0).collect();
        if itm.is_empty() {
            continue;
        }
        let x: Vec<f64> = itm.iter().map(|&i| s[i][j] / payoff.scale()).collect();
        let y: Vec<f64> = itm.iter().map(|&i| cash[i]).collect();
        let (cont, used) = fit_poly(&x, &y, basis_degree);
        if used < basis_degree.min(itm.len().saturating_sub(1)) {
            warnings.push(format!("step {j}: regression degree reduced from {basis_degree} to {used}"));
        }
        for (k, &i) in itm.iter().enumerate() {
            let ex = payoff.value(t, s[i][j]);
            if ex > cont[k] {
                cash[i] = ex;
            }
        }
    }
    let mean = cash.iter().sum::<f64>() / n as f64;
    let var = cash.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    // exercising at time 0 is deterministic; paths may start at different values
    let now: f64 = s.iter().map(|p| payoff.value(0.0, p[0])).sum::<f64>() / n as f64;
    if now > mean {
        return Ok(StoppingResult { value: now, stderr: 0.0, warnings });
    }
    Ok(StoppingResult { value: mean, stderr, warnings })
}

/// `AVaR_α(U) = min_z (1/α) E[(z − U)_+] − z` for the empirical law of `samples`.
pub fn avar(samples: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if samples.is_empty() {
        return Err(Error::Length("avar needs samples".into()));
    }
    let mut u = samples.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len();
    let obj = |z: f64| u.iter().map(|v| (z - v).max(0.0)).sum::<f64>() / (alpha * n as f64) - z;
    // the objective is piecewise linear with its minimum at the α-quantile
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok([k.saturating_sub(1), k, (k + 1).min(n - 1)].iter().map(|&i| obj(u[i])).fold(f64::INFINITY, f64::min))
}

/// Optimization problems with explicit Lipschitz constants in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptProblem {
    /// `inf_H E[Σ_t H_t (x_{t+1} − x_t)]`, `|H| ≤ bound`; `L = 2·bound`.
    PnL { bound: f64 },
    /// `inf_H AVaR_α(Σ_t H_t (x_{t+1} − x_t))`; `L = 2·bound / α`.
    AvarPnL { bound: f64, alpha: f64 },
}

impl OptProblem {
    pub fn lipschitz(&self) -> f64 {
        match *self {
            OptProblem::PnL { bound } => 2.0 * bound,
            OptProblem::AvarPnL { bound, alpha } => 2.0 * bound / alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OptProblem::PnL { bound } if bound >= 0.0 => Ok(()),
            OptProblem::AvarPnL { bound, alpha } if bound >= 0.0 && alpha > 0.0 && alpha <= 1.0 => Ok(()),
            _ => Err(Error::Parameter(format!("invalid problem {self:?}"))),
        }
    }
}

/// Largest support accepted by [`robustness_gap_check`].
pub const ROBUST_MAX_ATOMS: usize = 8;

/// Exact optimal value `𝒱(μ)` of `problem` over adapted strategies on a
/// one-channel discrete measure.
pub fn optimal_value(mu: &DiscreteMeasure, problem: &OptProblem) -> Result<f64> {
    problem.validate()?;
    if mu.dim != 1 {
        return Err(Error::Shape("P&L problems are defined for one channel".into()));
    }
    let mu = mu.merged();
    let t_len = mu.t_len;
    match *problem {
        OptProblem::PnL { bound } => {
            // h_t acts on cells of equal prefixes; optimum is −B |E[Δx | cell]| per cell
            let mut v = 0.0;
            for t in 1..t_len {
                let cls = mu.prefix_classes(t);
                let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
                for i in 0..mu.len() {
                    let a = mu.atom(i);
                    let e = acc.entry(cls[i]).or_default();
                    e.0 += mu.weights[i] * (a[t] - a[t - 1]);
                    e.1 += mu.weights[i];
                }
                v -= bound * acc.values().map(|(s, _)| s.abs()).sum::<f64>();
            }
            Ok(v)
        }
        OptProblem::AvarPnL { bound, alpha } => {
            let mut lp = Problem::new(OptimizationDirection::Minimize);
            let z = lp.add_var(-1.0, (f64::NEG_INFINITY, f64::INFINITY));
            let mut h: Vec<Vec<minilp::Variable>> = Vec::new();
            let mut classes = Vec::new();
            for t in 1..t_len {
                let cls = mu.prefix_classes(t);
                let n_cls = cls.iter().max().map_or(0, |m| m + 1);
                h.push((0..n_cls).map(|_| lp.add_var(0.0, (-bound, bound))).collect());
                classes.push(cls);
            }
            for i in 0..mu.len() {
                let s = lp.add_var(mu.weights[i] / alpha, (0.0, f64::INFINITY));
                // s_i ≥ z − Q(x_i, h)  ⇔  s_i − z + Σ_t h_t Δx_t ≥ 0
                let a = mu.atom(i);
                let mut expr: Vec<(minilp::Variable, f64)> = vec![(s, 1.0), (z, -1.0)];
                for t in 1..t_len {
                    let d = a[t] - a[t - 1];
                    if d != 0.0 {
                        expr.push((h[t - 1][classes[t - 1][i]], d));
                    }
                }
                lp.add_constraint(expr.into_iter().collect::<LinearExpr>(), ComparisonOp::Ge, 0.0);
            }
            let sol = lp.solve().map_err(|e| Error::Infeasible(format!("AVaR LP: {e}")))?;
            Ok(sol.objective())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub v_mu: f64,
    pub v_nu: f64,
    pub lipschitz: f64,
    pub cw1: f64,
    pub aw1: f64,
    /// `L·CW₁ − (𝒱(μ) − 𝒱(ν))`.
    pub causal_slack: f64,
    /// `L·AW₁ − |𝒱(μ) − 𝒱(ν)|`.
    pub adapted_slack: f64,
    pub holds: bool,
}

/// Tolerance on the slacks; absorbs LP round-off.
pub const ROBUST_TOL: f64 = 1e-9;

/// Computes both sides of `𝒱(μ) − 𝒱(ν) ≤ L·CW₁(μ, ν)` and `|𝒱(μ) − 𝒱(ν)| ≤ L·AW₁(μ, ν)`.
pub fn robustness_gap_check(mu: &DiscreteMeasure, nu: &DiscreteMeasure, problem: &OptProblem) -> Result<RobustnessReport> {
    if mu.len() > ROBUST_MAX_ATOMS || nu.len() > ROBUST_MAX_ATOMS {
        return Err(Error::InstanceTooLarge(format!("robustness check handles at most {ROBUST_MAX_ATOMS} atoms per measure")));
    }
    let v_mu = optimal_value(mu, problem)?;
    let v_nu = optimal_value(nu, problem)?;
    let cw1 = cw1_aw1_bruteforce(mu, nu, CouplingMode::Causal)?;
    let aw1 = cw1_aw1_bruteforce(mu, nu, CouplingMode::Bicausal)?;
    let l = problem.lipschitz();
    let causal_slack = l * cw1 - (v_mu - v_nu);
    let adapted_slack = l * aw1 - (v_mu - v_nu).abs();
    Ok(RobustnessReport {
        v_mu,
        v_nu,
        lipschitz: l,
        cw1,
        aw1,
        causal_slack,
        adapted_slack,
        holds: causal_slack >= -ROBUST_TOL && adapted_slack >= -ROBUST_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_paths(r_step: f64) -> PathSet {
        let p: Vec<Vec<f64>> = (0..3).map(|i| (0..5).map(|j| (1.0 + i as f64) * (r_step * j as f64).exp()).collect()).collect();
        PathSet::from_paths(&p, 0.25).unwrap()
    }

    #[test]
    fn zero_and_full_allocation() {
        let p = flat_paths(0.02);
        let w = wealth_terminal(&p, &Strategy::constant(0.0), 0.01, 2.0).unwrap();
        for v in &w.terminal {
            assert!((v - 2.0 * (0.01f64).exp()).abs() < 1e-14);
        }
        let w = wealth_terminal(&p, &Strategy::constant(1.0), 0.01, 1.0).unwrap();
        assert!((w.terminal[1] - (0.08f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn tabular_constant_matches() {
        let p = flat_paths(0.03);
        let t = Strategy::tabulate(&p, |_| 0.7);
        let a = wealth_terminal(&p, &t, 0.01, 1.0).unwrap();
        let b = wealth_terminal(&p, &Strategy::constant(0.7), 0.01, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn avar_examples() {
        assert!((avar(&[3.0; 5], 0.3).unwrap() + 3.0).abs() < 1e-15);
        assert!((avar(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap() + 1.5).abs() < 1e-15);
        assert!((avar(&[1.0, 5.0, -2.0], 1.0).unwrap() + 4.0 / 3.0).abs() < 1e-12);
        assert!(avar(&[1.0], 0.0).is_err());
        assert!(avar(&[1.0], 1.5).is_err());
    }

    #[test]
    fn envelope_keeps_non_dominated() {
        let pts = [(0.0, 1.0, 0.0), (1.0, 1.2, 0.1), (2.0, 1.1, 0.2), (3.0, 1.5, 0.3)]
            .map(|(p, m, v)| FrontierPoint { param: p, sigma: 0.0, mean: m, variance: v });
        let env = pareto_envelope(&pts);
        assert_eq!(env.iter().map(|p| p.param).collect::<Vec<_>>(), vec![0.0, 1.0, 3.0]);
        assert_eq!(envelope_distance(&env, &env, 20).unwrap(), 0.0);
    }

    #[test]
    fn constant_payoff_stopping() {
        let p: Vec<Vec<f64>> = (0..1000).map(|i| vec![1.0, 1.0 + i as f64 * 1e-3, 2.0]).collect();
        let set = PathSet::from_paths(&p, 1.0).unwrap();
        let r = lsmc_optimal_stopping(&set, &Payoff::Constant(2.5), 3).unwrap();
        assert!((r.value - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pflug_robustness() {
        let mu = DiscreteMeasure::new(vec![0.0, 1.0, 0.0, -1.0], vec![0.5, 0.5], 2, 1).unwrap();
        let nu = DiscreteMeasure::new(vec![0.1, 1.0, -0.1, -1.0], vec![0.5, 0.5], 2, 1).unwrap();
        let rep = robustness_gap_check(&mu, &nu, &OptProblem::PnL { bound: 1.0 }).unwrap();
        assert_eq!(rep.v_mu, 0.0);
        assert!((rep.v_nu + 0.9).abs() < 1e-12);
        assert!((rep.lipschitz * rep.aw1 - 2.2).abs() < 1e-9);
        assert!(rep.holds);
        let same = robustness_gap_check(&mu, &mu, &OptProblem::AvarPnL { bound: 1.0, alpha: 0.5 }).unwrap();
        assert_eq!(same.v_mu, same.v_nu);
        assert!(same.holds);
    }

    #[test]
    fn mv_policy_infinite_aversion_is_riskless() {
        let pol = MvPolicy { mu: 0.1, sigma: 0.2, r: 0.01, dt: 1.0 / 12.0, n_steps: 60, kappa: f64::INFINITY, w0: 1.0 };
        let prices: Vec<f64> = (0..61).map(|j| 1.0 + 0.1 * (j as f64).sin()).collect();
        assert!((pol.terminal_wealth(&prices) - (0.05f64).exp()).abs() < 1e-12);
    }
}
