use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use crate::rng::Rng;
use rand::Rng as _;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat owner of every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        self.tensors.push(Tensor { name: name.into(), shape, data });
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform `±scale` initialisation.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, scale: f64, rng: &mut Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.tensors[id.0].data
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = value));
    }
}

/// A tape bound to a parameter store; parameters enter the tape lazily as leaves.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.tensors[id.0].data.clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.tape.leaf(value)
    }

    /// Parameter gradients aligned with the store (zeros for unused tensors).
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.store
            .tensors
            .iter()
            .zip(&self.bound)
            .map(|(t, b)| match b.and_then(|v| grads.get_ref(v)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.data.len()],
            })
            .collect()
    }

    /// Adds this graph's parameter gradients, scaled by `weight`, into `acc`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, weight: f64, acc: &mut [Vec<f64>]) {
        for (slot, b) in acc.iter_mut().zip(&self.bound) {
            if let Some(g) = b.and_then(|v| grads.get_ref(v)) {
                slot.iter_mut().zip(g).for_each(|(a, x)| *a += weight * x);
            }
        }
    }
}
