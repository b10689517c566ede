//! Discrete-time samplers for Black-Scholes, Heston and the 4-factor
//! path-dependent volatility model.
//!
//! Path `i` draws its price noise from substream `i` of the seed, so a path is
//! identical whatever the evaluation order, and models that share the price
//! step reproduce each other exactly in their degenerate limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_data::PathSet;
use crate::rng;

const VARIANCE_STREAM: u64 = 0x5641_5249_414e_4345;
/// Lower bound on the PDV4 volatility.
pub const PDV4_SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BSParams {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for BSParams {
    fn default() -> Self {
        Self { mu: 0.1, sigma: 0.2, s0: 1.0, dt: 1.0 / 12.0, n_steps: 60 }
    }
}

impl BSParams {
    pub fn validate(&self) -> Result<()> {
        check(self.sigma >= 0.0, "sigma must be >= 0")?;
        check(self.s0 > 0.0, "s0 must be > 0")?;
        check(self.dt > 0.0, "dt must be > 0")?;
        check(self.n_steps >= 1, "n_steps must be >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HestonParams {
    pub mu: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub s0: f64,
    pub v0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self { mu: 0.02, kappa: 1.0, theta: 0.2, xi: 0.5, rho: -0.9, s0: 1.0, v0: 0.2, dt: 1.0 / 12.0, n_steps: 60 }
    }
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        check(self.kappa >= 0.0 && self.theta >= 0.0 && self.xi >= 0.0, "kappa, theta, xi must be >= 0")?;
        check(self.v0 >= 0.0, "v0 must be >= 0")?;
        check((-1.0..=1.0).contains(&self.rho), "rho must lie in [-1, 1]")?;
        check(self.s0 > 0.0 && self.dt > 0.0 && self.n_steps >= 1, "s0, dt, n_steps must be positive")
    }
}

/// 4-factor Markovian path-dependent volatility model.
///
/// `σ = β₀ + β₁R₁ + β₂√R₂`, `R₁ = (1−θ₁)R₁₀ + θ₁R₁₁`, `R₂ = (1−θ₂)R₂₀ + θ₂R₂₁`,
/// `dR₁ⱼ = λ₁ⱼ(σ dW − R₁ⱼ dt)`, `dR₂ⱼ = λ₂ⱼ(σ² − R₂ⱼ) dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PDV4Params {
    pub mu: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda11: f64,
    pub lambda12: f64,
    pub theta1: f64,
    pub lambda21: f64,
    pub lambda22: f64,
    pub theta2: f64,
    pub s0: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Steps simulated before the recorded window; factor state carries over.
    pub burn_in: usize,
    /// Initial value of both R₂ factors (R₁ factors start at 0).
    pub r2_init: f64,
}

impl Default for PDV4Params {
    fn default() -> Self {
        Self {
            mu: 0.1,
            beta0: 0.04,
            beta1: -0.13,
            beta2: 0.65,
            lambda11: 55.0,
            lambda12: 10.0,
            theta1: 0.25,
            lambda21: 20.0,
            lambda22: 3.0,
            theta2: 0.5,
            s0: 1.0,
            dt: 1.0 / 365.0,
            n_steps: 60,
            burn_in: 250,
            r2_init: 0.0,
        }
    }
}

impl PDV4Params {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda11, self.lambda12, self.lambda21, self.lambda22];
        check(lambdas.iter().all(|&l| l > 0.0), "lambdas must be > 0")?;
        check((0.0..=1.0).contains(&self.theta1) && (0.0..=1.0).contains(&self.theta2), "theta1, theta2 must lie in [0, 1]")?;
        check(self.r2_init >= 0.0, "r2_init must be >= 0")?;
        check(self.s0 > 0.0 && self.dt > 0.0 && self.n_steps >= 1, "s0, dt, n_steps must be positive")
    }

    pub fn sigma(&self, r1: f64, r2: f64) -> f64 {
        (self.beta0 + self.beta1 * r1 + self.beta2 * r2.max(0.0).sqrt()).max(PDV4_SIGMA_FLOOR)
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(msg.to_string()))
    }
}

#[inline]
fn log_step(s: f64, mu: f64, var: f64, dt: f64, z: f64) -> f64 {
    s * ((mu - 0.5 * var) * dt + (var * dt).sqrt() * z).exp()
}

/// Black-Scholes prices on the exact log-normal grid; `n_steps + 1` points per path.
pub fn simulate_bs(p: &BSParams, n_paths: usize, seed: u64) -> Result<PathSet> {
    p.validate()?;
    check(n_paths >= 1, "n_paths must be >= 1")?;
    let var = p.sigma * p.sigma;
    let len = p.n_steps + 1;
    let mut values = vec![0.0; n_paths * len];
    values.par_chunks_mut(len).enumerate().for_each(|(i, path)| {
        let mut r = rng::stream(seed, i as u64);
        path[0] = p.s0;
        for j in 0..p.n_steps {
            path[j + 1] = log_step(path[j], p.mu, var, p.dt, rng::normal(&mut r));
        }
    });
    Ok(PathSet::new(values, n_paths, len, 1, p.dt)?.with_label("bs"))
}

/// Heston with full-truncation Euler variance and log-Euler price.
///
/// Channels: price, variance.
pub fn simulate_heston(p: &HestonParams, n_paths: usize, seed: u64) -> Result<PathSet> {
    p.validate()?;
    check(n_paths >= 1, "n_paths must be >= 1")?;
    let len = p.n_steps + 1;
    let orth = (1.0 - p.rho * p.rho).max(0.0).sqrt();
    let mut values = vec![0.0; n_paths * len * 2];
    values.par_chunks_mut(len * 2).enumerate().for_each(|(i, path)| {
        let mut rs = rng::stream(seed, i as u64);
        let mut rv = rng::stream(rng::mix(seed, VARIANCE_STREAM), i as u64);
        let (mut s, mut v) = (p.s0, p.v0);
        path[0] = s;
        path[1] = v;
        for j in 0..p.n_steps {
            let z1 = rng::normal(&mut rs);
            let z2 = rng::normal(&mut rv);
            let vp = v.max(0.0);
            let zv = p.rho * z1 + orth * z2;
            s = log_step(s, p.mu, vp, p.dt, z1);
            v = v + p.kappa * (p.theta - vp) * p.dt + p.xi * (vp * p.dt).sqrt() * zv;
            path[2 * (j + 1)] = s;
            path[2 * (j + 1) + 1] = v.max(0.0);
        }
    });
    Ok(PathSet::new(values, n_paths, len, 2, p.dt)?.with_label("heston"))
}

#[derive(Debug, Clone, Copy)]
struct Pdv4State {
    r11: f64,
    r12: f64,
    r21: f64,
    r22: f64,
}

impl Pdv4State {
    fn new(p: &PDV4Params) -> Self {
        Self { r11: 0.0, r12: 0.0, r21: p.r2_init, r22: p.r2_init }
    }

    fn sigma(&self, p: &PDV4Params) -> f64 {
        let r1 = (1.0 - p.theta1) * self.r11 + p.theta1 * self.r12;
        let r2 = (1.0 - p.theta2) * self.r21 + p.theta2 * self.r22;
        p.sigma(r1, r2)
    }

    /// Advances the factors by one Euler step driven by the Brownian increment `dw`.
    fn advance(&mut self, p: &PDV4Params, sigma: f64, dw: f64) {
        let dt = p.dt;
        let s2 = sigma * sigma;
        self.r11 += p.lambda11 * (sigma * dw - self.r11 * dt);
        self.r12 += p.lambda12 * (sigma * dw - self.r12 * dt);
        self.r21 += p.lambda21 * (s2 - self.r21) * dt;
        self.r22 += p.lambda22 * (s2 - self.r22) * dt;
    }
}

/// Runs one PDV4 path of `n_steps` after `burn_in` discarded steps, writing
/// `(price, sigma)` pairs into `out` (length `2 * (n_steps + 1)`).
fn pdv4_path(p: &PDV4Params, seed: u64, stream: u64, out: &mut [f64]) {
    let mut r = rng::stream(seed, stream);
    let mut burn = rng::stream(rng::mix(seed, 0xB0B0), stream);
    let mut st = Pdv4State::new(p);
    for _ in 0..p.burn_in {
        let sigma = st.sigma(p);
        let dw = p.dt.sqrt() * rng::normal(&mut burn);
        st.advance(p, sigma, dw);
    }
    let mut s = p.s0;
    let mut sigma = st.sigma(p);
    out[0] = s;
    out[1] = sigma;
    for j in 0..p.n_steps {
        let z = rng::normal(&mut r);
        s = log_step(s, p.mu, sigma * sigma, p.dt, z);
        st.advance(p, sigma, p.dt.sqrt() * z);
        sigma = st.sigma(p);
        out[2 * (j + 1)] = s;
        out[2 * (j + 1) + 1] = sigma;
    }
}

/// PDV4 paths; channels: price, volatility σ_t.
pub fn simulate_pdv4(p: &PDV4Params, n_paths: usize, seed: u64) -> Result<PathSet> {
    p.validate()?;
    check(n_paths >= 1, "n_paths must be >= 1")?;
    let len = p.n_steps + 1;
    let mut values = vec![0.0; n_paths * len * 2];
    values
        .par_chunks_mut(len * 2)
        .enumerate()
        .for_each(|(i, path)| pdv4_path(p, seed, i as u64, path));
    Ok(PathSet::new(values, n_paths, len, 2, p.dt)?.with_label("pdv4"))
}

/// One long PDV4 series (price, σ) of `n_steps + 1` points.
pub fn simulate_pdv4_series(p: &PDV4Params, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let set = simulate_pdv4(p, 1, seed)?;
    Ok((set.channel(0).values, set.channel(1).values))
}
