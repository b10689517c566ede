use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self { m: store.zeros_like(), v: store.zeros_like(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies one update. Non-finite gradients leave the parameters untouched
    /// and are reported with the offending tensor name.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Shape(format!("{} gradients for {} tensors", grads.len(), store.len())));
        }
        for (t, g) in store.tensors.iter().zip(grads) {
            if g.len() != t.data.len() {
                return Err(Error::Shape(format!("gradient for `{}` has {} entries, expected {}", t.name, g.len(), t.data.len())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("non-finite gradient in `{}`", t.name)));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, t) in store.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..t.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                t.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", vec![3], vec![1.0, -2.0, 0.5]);
        s
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = store();
        let mut adam = AdamState::new(&s, 0.01);
        adam.eps = 0.0;
        adam.step(&mut s, &[vec![0.3, -4.0, 1e-3]]).unwrap();
        let d = &s.tensors[0].data;
        // m̂ = g, v̂ = g² on step 1, so the update is exactly -lr·sign(g)
        assert!((d[0] - 0.99).abs() < 1e-15);
        assert!((d[1] + 1.99).abs() < 1e-15);
        assert!((d[2] - 0.49).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_no_change() {
        let mut s = store();
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.01);
        adam.step(&mut s, &[vec![0.0; 3]]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn deterministic() {
        let (mut a, mut b) = (store(), store());
        let (mut oa, mut ob) = (AdamState::new(&a, 0.1), AdamState::new(&b, 0.1));
        for _ in 0..3 {
            oa.step(&mut a, &[vec![0.1, 0.2, -0.3]]).unwrap();
            ob.step(&mut b, &[vec![0.1, 0.2, -0.3]]).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut s = store();
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.1);
        assert!(adam.step(&mut s, &[vec![0.0, f64::NAN, 0.0]]).is_err());
        assert_eq!(s, before);
        assert_eq!(adam.step, 0);
    }
}
