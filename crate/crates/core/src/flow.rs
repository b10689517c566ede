//! Learnable prior built from a chain of affine coupling layers.
//!
//! Generation runs `z = f_N ∘ … ∘ f_1 (z₀)` with `z₀ ~ N(0, I)`; density
//! evaluation pulls `z` back through the inverses and adds the log-determinants.
//! Coordinates are split by the parity of their time index, alternating
//! between layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Mlp, ParamStore, Var};
use crate::rng::{self, Rng};
use rand::Rng as _;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// Coordinates passed through unchanged and fed to the subnetworks.
    pub cond: Vec<usize>,
    /// Coordinates that get scaled and shifted.
    pub free: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub scale_cap: f64,
}

impl CouplingLayer {
    fn scale_and_shift(&self, g: &mut Graph, zc: Var) -> (Var, Var) {
        let raw = self.scale_net.forward(g, zc);
        let bounded = g.tape.tanh(raw);
        let s = g.tape.scale(bounded, self.scale_cap);
        let t = self.shift_net.forward(g, zc);
        (s, t)
    }

    /// Applies the layer in `dir`; returns the transformed vector and the
    /// log-determinant of that direction's Jacobian.
    pub fn apply_var(&self, g: &mut Graph, z: Var, dir: Direction) -> (Var, Var) {
        let n = g.tape.value(z).len();
        let zc = g.tape.gather(z, &self.cond);
        let zf = g.tape.gather(z, &self.free);
        let (s, t) = self.scale_and_shift(g, zc);
        let (out_f, log_det) = match dir {
            Direction::Forward => {
                let es = g.tape.exp(s);
                let scaled = g.tape.mul(zf, es);
                let out = g.tape.add(scaled, t);
                (out, g.tape.sum(s))
            }
            Direction::Inverse => {
                let diff = g.tape.sub(zf, t);
                let neg = g.tape.scale(s, -1.0);
                let es = g.tape.exp(neg);
                let out = g.tape.mul(diff, es);
                let ld = g.tape.sum(neg);
                (out, ld)
            }
        };
        let z_new = g.tape.assemble(&[(zc, &self.cond), (out_f, &self.free)], n);
        (z_new, log_det)
    }

    /// Plain-value version of [`apply_var`](Self::apply_var).
    pub fn apply(&self, store: &ParamStore, z: &[f64], dir: Direction) -> (Vec<f64>, f64) {
        let mut g = Graph::new(store);
        let zv = g.input(z.to_vec());
        let (out, ld) = self.apply_var(&mut g, zv, dir);
        (g.tape.value(out).to_vec(), g.tape.scalar(ld))
    }
}

/// Coupling-flow prior on `ℝ^{d_z · T}` over a standard normal base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPrior {
    pub layers: Vec<CouplingLayer>,
    pub d_z: usize,
    pub t_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub scale_cap: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { n_layers: 6, hidden: 64, scale_cap: 3.0 }
    }
}

impl FlowPrior {
    /// Builds an identity-initialised flow (zero output layers).
    pub fn new(store: &mut ParamStore, name: &str, d_z: usize, t_len: usize, cfg: &FlowConfig, rng: &mut Rng) -> Self {
        let dim = d_z * t_len;
        let layers = (0..cfg.n_layers)
            .map(|k| {
                let parity = k % 2;
                let (cond, free): (Vec<usize>, Vec<usize>) = (0..dim).partition(|i| (i / d_z) % 2 == parity);
                let sizes = [cond.len(), cfg.hidden, cfg.hidden, free.len()];
                let scale_net = Mlp::new(store, &format!("{name}.{k}.s"), &sizes, 0.0, rng);
                let shift_net = Mlp::new(store, &format!("{name}.{k}.t"), &sizes, 0.0, rng);
                CouplingLayer { cond, free, scale_net, shift_net, scale_cap: cfg.scale_cap }
            })
            .collect();
        Self { layers, d_z, t_len }
    }

    pub fn dim(&self) -> usize {
        self.d_z * self.t_len
    }

    /// Overwrites every subnetwork output layer with uniform `±scale` values so
    /// the flow is no longer the identity.
    pub fn randomize(&self, store: &mut ParamStore, scale: f64, rng: &mut Rng) {
        for layer in &self.layers {
            for net in [&layer.scale_net, &layer.shift_net] {
                let last = net.layers.last().expect("non-empty mlp");
                for id in [last.w, last.b] {
                    store.data_mut(id).iter_mut().for_each(|v| *v = rng.random_range(-scale..=scale));
                }
            }
        }
    }

    /// Differentiable `log p(z)`.
    pub fn log_prob_var(&self, g: &mut Graph, z: Var) -> Var {
        let mut cur = z;
        let mut terms = Vec::with_capacity(self.layers.len() + 1);
        for layer in self.layers.iter().rev() {
            let (prev, ld) = layer.apply_var(g, cur, Direction::Inverse);
            terms.push(ld);
            cur = prev;
        }
        let n = g.tape.value(cur).len() as f64;
        let sq = g.tape.square(cur);
        let ss = g.tape.sum(sq);
        let base = g.tape.scale(ss, -0.5);
        let base = g.tape.shift(base, -0.5 * n * LOG_2PI);
        terms.push(base);
        let all = g.tape.concat(&terms);
        g.tape.sum(all)
    }

    pub fn log_prob(&self, store: &ParamStore, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!("flow expects {} coordinates, got {}", self.dim(), z.len())));
        }
        let mut g = Graph::new(store);
        let zv = g.input(z.to_vec());
        let lp = self.log_prob_var(&mut g, zv);
        Ok(g.tape.scalar(lp))
    }

    /// Pushes a base sample through the flow.
    pub fn transform(&self, store: &ParamStore, z0: &[f64]) -> Vec<f64> {
        let mut z = z0.to_vec();
        for layer in &self.layers {
            z = layer.apply(store, &z, Direction::Forward).0;
        }
        z
    }

    /// Pulls a sample back to the base space.
    pub fn inverse(&self, store: &ParamStore, z: &[f64]) -> Vec<f64> {
        let mut cur = z.to_vec();
        for layer in self.layers.iter().rev() {
            cur = layer.apply(store, &cur, Direction::Inverse).0;
        }
        cur
    }

    /// `n` samples; sample `i` uses substream `i` of `seed`.
    pub fn sample(&self, store: &ParamStore, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, i as u64);
                let z0 = rng::normals(&mut r, self.dim());
                self.transform(store, &z0)
            })
            .collect()
    }
}

/// Standard normal log density on `ℝⁿ`.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LOG_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(d_z: usize, t: usize, layers: usize, randomize: bool) -> (ParamStore, FlowPrior) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(3, 0);
        let cfg = FlowConfig { n_layers: layers, hidden: 8, scale_cap: 3.0 };
        let f = FlowPrior::new(&mut store, "flow", d_z, t, &cfg, &mut r);
        if randomize {
            f.randomize(&mut store, 0.5, &mut r);
        }
        (store, f)
    }

    #[test]
    fn zero_layers_origin() {
        let (store, f) = flow(1, 2, 0, false);
        let lp = f.log_prob(&store, &[0.0, 0.0]).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((lp + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn identity_init() {
        let (store, f) = flow(2, 3, 4, false);
        let z = [0.3, -1.0, 2.0, 0.1, -0.4, 0.9];
        let (out, ld) = f.layers[0].apply(&store, &z, Direction::Forward);
        assert_eq!(out, z.to_vec());
        assert_eq!(ld, 0.0);
        assert!((f.log_prob(&store, &z).unwrap() - std_normal_log_density(&z)).abs() < 1e-12);
    }

    #[test]
    fn round_trip_random_params() {
        let (store, f) = flow(2, 3, 6, true);
        let mut r = rng::stream(9, 1);
        for _ in 0..20 {
            let z = rng::normals(&mut r, 6);
            let back = f.inverse(&store, &f.transform(&store, &z));
            for (a, b) in back.iter().zip(&z) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn alternating_masks_cover_everything() {
        let (store, f) = flow(1, 5, 2, true);
        let z = vec![0.2; 5];
        let out = f.transform(&store, &z);
        assert!(out.iter().zip(&z).all(|(a, b)| a != b));
    }

    #[test]
    fn log_prob_shape_error() {
        let (store, f) = flow(1, 3, 2, false);
        assert!(f.log_prob(&store, &[0.0]).is_err());
    }
}
