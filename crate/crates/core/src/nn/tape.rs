//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Every node holds a dense `Vec<f64>` value. Nodes are appended in
//! evaluation order, so parents always precede children and the backward
//! sweep is a single reverse pass over the node list.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `W x (+ b)` with `W` stored row-major as `rows × cols`.
    Affine { w: usize, x: usize, b: Option<usize>, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Scalar node times vector node.
    ScaleBy(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    Norm(usize),
    Concat(Vec<usize>),
    Gather(usize, Vec<usize>),
    /// Writes each part's entries at the listed output positions.
    Assemble(Vec<(usize, Vec<usize>)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A recording of one forward evaluation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    pub fn get_ref(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn same_len(&self, a: Var, b: Var) {
        assert_eq!(self.val(a).len(), self.val(b).len(), "elementwise operands differ in length");
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(vec![value], Op::Leaf)
    }

    /// `W x + b`, `W` row-major `rows × cols`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>, rows: usize, cols: usize) -> Var {
        let (wv, xv) = (self.val(w), self.val(x));
        assert_eq!(wv.len(), rows * cols, "weight shape");
        assert_eq!(xv.len(), cols, "input length");
        let mut y = match b {
            Some(b) => {
                assert_eq!(self.val(b).len(), rows, "bias length");
                self.val(b).to_vec()
            }
            None => vec![0.0; rows],
        };
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            *yr += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(y, Op::Affine { w: w.0, x: x.0, b: b.map(|b| b.0), rows, cols })
    }

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        self.affine(w, x, None, rows, cols)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_len(a, b);
        let v = self.val(a).iter().zip(self.val(b)).map(|(x, y)| f(*x, *y)).collect();
        self.push(v, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.val(a).iter().map(|&x| f(x)).collect();
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `s · a` for a one-element node `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.val(s).len(), 1, "scale_by expects a scalar");
        let k = self.val(s)[0];
        self.map(a, |x| k * x, Op::ScaleBy(s.0, a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Shift(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).iter().sum();
        self.push(vec![s], Op::Sum(a.0))
    }

    /// Euclidean norm; the subgradient at the origin is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.val(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(vec![n], Op::Norm(a.0))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts.iter().flat_map(|p| self.val(*p).iter().copied()).collect();
        self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.val(a);
        let v = idx.iter().map(|&i| av[i]).collect();
        self.push(v, Op::Gather(a.0, idx.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(a, &idx)
    }

    /// Places the entries of each part at the given output positions; other
    /// positions are zero. A position may appear in at most one part.
    pub fn assemble(&mut self, parts: &[(Var, &[usize])], len: usize) -> Var {
        let mut v = vec![0.0; len];
        for (p, pos) in parts {
            let pv = self.val(*p);
            assert_eq!(pv.len(), pos.len(), "assemble part length");
            for (x, &i) in pv.iter().zip(pos.iter()) {
                v[i] = *x;
            }
        }
        self.push(v, Op::Assemble(parts.iter().map(|(p, pos)| (p.0, pos.to_vec())).collect()))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let n = self.nodes[root.0].value.len();
        if n != 1 {
            return Err(Error::Shape(format!("backward root must be scalar, has {n} entries")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let len_of = |j: usize| self.nodes[j].value.len();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[j].get_or_insert_with(|| vec![0.0; len_of(j)]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { w, x, b, rows, cols } => {
                let (wv, xv) = (&self.nodes[*w].value, &self.nodes[*x].value);
                let (rows, cols) = (*rows, *cols);
                acc(*w, &mut |gw| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (gwc, xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *gwc += gr * xc;
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (gxc, wc) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *gxc += gr * wc;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(a, d)| *a += d));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * bv[k];
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * av[k];
                    }
                });
            }
            Op::ScaleBy(s, a) => {
                let (sv, av) = (self.nodes[*s].value[0], &self.nodes[*a].value);
                let ds: f64 = g.iter().zip(av).map(|(d, x)| d * x).sum();
                acc(*s, &mut |gs| gs[0] += ds);
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += sv * d));
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += c * d)),
            Op::Shift(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d)),
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * y[k];
                    }
                });
            }
            Op::Log(a) => {
                let x = &self.nodes[*a].value;
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] / x[k];
                    }
                });
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * sigmoid(x[k]);
                    }
                });
            }
            Op::Square(a) => {
                let x = &self.nodes[*a].value;
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += 2.0 * g[k] * x[k];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Norm(a) => {
                let n = node.value[0];
                if n > 0.0 {
                    let x = &self.nodes[*a].value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[0] * x[k] / n;
                        }
                    });
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let l = len_of(p);
                    acc(p, &mut |gp| gp.iter_mut().zip(&g[off..off + l]).for_each(|(x, d)| *x += d));
                    off += l;
                }
            }
            Op::Gather(a, idx) => acc(*a, &mut |ga| {
                for (d, &k) in g.iter().zip(idx) {
                    ga[k] += d;
                }
            }),
            Op::Assemble(parts) => {
                for (p, pos) in parts {
                    acc(*p, &mut |gp| {
                        for (x, &k) in gp.iter_mut().zip(pos) {
                            *x += g[k];
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0]);
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x), vec![6.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0]);
        let y = t.tanh(x);
        assert_eq!(t.backward(y).unwrap().get(x), vec![1.0]);
    }

    #[test]
    fn non_scalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        let z = t.leaf(vec![5.0]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(z), vec![0.0]);
        assert_eq!(g.get(x), vec![1.0, 1.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(x * x) + sum(x) → df/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(vec![1.5, -2.0]);
        let xx = t.mul(x, x);
        let a = t.sum(xx);
        let b = t.sum(x);
        let f = t.add(a, b);
        assert_eq!(t.backward(f).unwrap().get(x), vec![4.0, -3.0]);
    }

    #[test]
    fn norm_at_origin_is_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0, 0.0]);
        let n = t.norm(x);
        assert_eq!(t.backward(n).unwrap().get(x), vec![0.0, 0.0]);
    }
}
