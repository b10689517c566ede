//! Dense layers and structurally causal recurrent networks.

use serde::{Deserialize, Serialize};

use super::params::{Graph, ParamId, ParamStore};
use super::tape::Var;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let scale = (6.0 / (n_in + n_out) as f64).sqrt();
        Self::with_scale(store, name, n_in, n_out, scale, rng)
    }

    pub fn with_scale(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, scale: f64, rng: &mut Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), vec![n_out, n_in], scale, rng);
        let b = store.add_zeros(format!("{name}.b"), vec![n_out]);
        Self { w, b, n_in, n_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.tape.affine(w, x, Some(b), self.n_out, self.n_in)
    }
}

/// Dense net with tanh between layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. The output layer is scaled by `out_scale`
    /// (0 gives an exactly zero-initialised output).
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], out_scale: f64, rng: &mut Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let lname = format!("{name}.{k}");
                if k + 1 == n {
                    let glorot = (6.0 / (sizes[k] + sizes[k + 1]) as f64).sqrt();
                    Dense::with_scale(store, &lname, sizes[k], sizes[k + 1], glorot * out_scale, rng)
                } else {
                    Dense::new(store, &lname, sizes[k], sizes[k + 1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if k + 1 < self.layers.len() {
                h = g.tape.tanh(h);
            }
        }
        h
    }
}

/// Recurrent map `h_t = tanh(W_x x_t + W_h h_{t-1} + b)`, `y_t = head(h_t)`, `h_0 = 0`.
///
/// Output `t` depends only on inputs `1..=t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalNet {
    pub input: Dense,
    pub recurrent: ParamId,
    pub head: Dense,
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: usize,
}

impl CausalNet {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let input = Dense::new(store, &format!("{name}.in"), in_dim, hidden, rng);
        let rscale = 1.0 / (hidden as f64).sqrt();
        let recurrent = store.add_uniform(format!("{name}.rec"), vec![hidden, hidden], rscale, rng);
        let head = Dense::new(store, &format!("{name}.head"), hidden, out_dim, rng);
        Self { input, recurrent, head, in_dim, out_dim, hidden }
    }

    /// Runs the recurrence over per-step inputs.
    pub fn forward(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(xs.len());
        let wh = g.param(self.recurrent);
        let mut h: Option<Var> = None;
        for &x in xs {
            if g.tape.value(x).len() != self.in_dim {
                return Err(Error::Shape(format!(
                    "causal net expects {} inputs per step, got {}",
                    self.in_dim,
                    g.tape.value(x).len()
                )));
            }
            let mut pre = self.input.forward(g, x);
            if let Some(prev) = h {
                let rec = g.tape.matvec(wh, prev, self.hidden, self.hidden);
                pre = g.tape.add(pre, rec);
            }
            let state = g.tape.tanh(pre);
            h = Some(state);
            out.push(self.head.forward(g, state));
        }
        Ok(out)
    }

    /// Evaluates on a flat `[T × in_dim]` array, returning `[T × out_dim]`.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % self.in_dim != 0 {
            return Err(Error::Shape(format!("input length {} not a multiple of {}", x.len(), self.in_dim)));
        }
        let mut g = Graph::new(store);
        let xs: Vec<Var> = x.chunks(self.in_dim).map(|c| g.input(c.to_vec())).collect();
        let ys = self.forward(&mut g, &xs)?;
        Ok(ys.iter().flat_map(|y| g.tape.value(*y).to_vec()).collect())
    }
}

/// Splits a flat `[T × dim]` input into per-step leaves.
pub fn step_inputs(g: &mut Graph, x: &[f64], dim: usize) -> Vec<Var> {
    x.chunks(dim).map(|c| g.input(c.to_vec())).collect()
}
