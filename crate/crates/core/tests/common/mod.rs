#![allow(dead_code)]

use rand::Rng as _;
use tcvae::flow::{FlowConfig, FlowPrior};
use tcvae::metrics::DiscreteMeasure;
use tcvae::nn::{CausalNet, ParamStore, Tape, Var};
use tcvae::rng::{self, Rng};
use tcvae::tcvae::{ModelConfig, OutputLink, TcVae};

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// A scalar function of several vector leaves.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub build: Build,
}

fn eval(inputs: &[Vec<f64>], build: &Build) -> f64 {
    let mut t = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let root = build(&mut t, &leaves);
    t.scalar(root)
}

/// Largest relative disagreement between tape gradients and central
/// differences, with magnitudes floored at 1e-3.
pub fn max_grad_error(case: &GradCase) -> f64 {
    let mut t = Tape::new();
    let leaves: Vec<Var> = case.inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let root = (case.build)(&mut t, &leaves);
    assert_eq!(t.value(root).len(), 1, "{}: root must be scalar", case.name);
    let grads = t.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let g = grads.get(*leaf);
        for i in 0..case.inputs[k].len() {
            let x = case.inputs[k][i];
            let h = 1e-5 * x.abs().max(1.0);
            let mut up = case.inputs.clone();
            up[k][i] = x + h;
            let mut dn = case.inputs.clone();
            dn[k][i] = x - h;
            let fd = (eval(&up, &case.build) - eval(&dn, &case.build)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Contracts a vector node against fixed weights so every entry matters.
fn contract(t: &mut Tape, v: Var, seed: u64) -> Var {
    let n = t.value(v).len();
    let mut r = rng::stream(seed, 99);
    let w = t.leaf(uniform(&mut r, n, -1.0, 1.0));
    let p = t.mul(v, w);
    t.sum(p)
}

/// One case per tape primitive.
pub fn primitive_cases() -> Vec<GradCase> {
    let mut r = rng::stream(2024, 0);
    let v4 = |r: &mut Rng| uniform(r, 4, -1.5, 1.5);
    let mut cases: Vec<GradCase> = Vec::new();
    let mut push = |name: &str, inputs: Vec<Vec<f64>>, build: Build| {
        cases.push(GradCase { name: name.into(), inputs, build });
    };
    push(
        "affine",
        vec![uniform(&mut r, 12, -1.0, 1.0), v4(&mut r), uniform(&mut r, 3, -1.0, 1.0)],
        Box::new(|t, l| {
            let y = t.affine(l[0], l[1], Some(l[2]), 3, 4);
            contract(t, y, 1)
        }),
    );
    push(
        "matvec",
        vec![uniform(&mut r, 12, -1.0, 1.0), v4(&mut r)],
        Box::new(|t, l| {
            let y = t.matvec(l[0], l[1], 3, 4);
            contract(t, y, 2)
        }),
    );
    type Bin = fn(&mut Tape, Var, Var) -> Var;
    let bins: [(&str, Bin); 3] = [("add", Tape::add), ("sub", Tape::sub), ("mul", Tape::mul)];
    for (name, op) in bins {
        push(
            name,
            vec![v4(&mut r), v4(&mut r)],
            Box::new(move |t, l| {
                let y = op(t, l[0], l[1]);
                contract(t, y, 3)
            }),
        );
    }
    push(
        "scale_by",
        vec![vec![0.7], v4(&mut r)],
        Box::new(|t, l| {
            let y = t.scale_by(l[0], l[1]);
            contract(t, y, 4)
        }),
    );
    push(
        "scale",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let y = t.scale(l[0], -2.5);
            contract(t, y, 5)
        }),
    );
    push(
        "shift",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let y = t.shift(l[0], 0.3);
            let y = t.square(y);
            contract(t, y, 6)
        }),
    );
    type Un = fn(&mut Tape, Var) -> Var;
    let uns: [(&str, Un); 4] = [("tanh", Tape::tanh), ("exp", Tape::exp), ("softplus", Tape::softplus), ("square", Tape::square)];
    for (name, op) in uns {
        push(
            name,
            vec![v4(&mut r)],
            Box::new(move |t, l| {
                let y = op(t, l[0]);
                contract(t, y, 7)
            }),
        );
    }
    push(
        "log",
        vec![uniform(&mut r, 4, 0.2, 3.0)],
        Box::new(|t, l| {
            let y = t.log(l[0]);
            contract(t, y, 8)
        }),
    );
    push(
        "sum",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let y = t.square(l[0]);
            t.sum(y)
        }),
    );
    push(
        "norm",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let n = t.norm(l[0]);
            contract(t, n, 9)
        }),
    );
    push(
        "concat",
        vec![v4(&mut r), uniform(&mut r, 2, -1.0, 1.0)],
        Box::new(|t, l| {
            let y = t.concat(&[l[0], l[1], l[0]]);
            contract(t, y, 10)
        }),
    );
    push(
        "gather",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let y = t.gather(l[0], &[3, 0, 0, 2, 3]);
            contract(t, y, 11)
        }),
    );
    push(
        "slice",
        vec![v4(&mut r)],
        Box::new(|t, l| {
            let y = t.slice(l[0], 1, 2);
            contract(t, y, 12)
        }),
    );
    push(
        "assemble",
        vec![uniform(&mut r, 2, -1.0, 1.0), uniform(&mut r, 3, -1.0, 1.0)],
        Box::new(|t, l| {
            let y = t.assemble(&[(l[0], &[4, 1]), (l[1], &[0, 2, 3])], 5);
            contract(t, y, 13)
        }),
    );
    cases
}

/// Random expression graph over three length-4 vectors and a 4×4 matrix.
///
/// Ops that can grow without bound are squashed through `tanh`, keeping
/// values in a range where central differences are accurate.
pub fn random_composite(seed: u64) -> GradCase {
    const N: usize = 4;
    let mut r = rng::stream(seed, 7);
    let inputs = vec![
        uniform(&mut r, N, -1.0, 1.0),
        uniform(&mut r, N, -1.0, 1.0),
        uniform(&mut r, N, -1.0, 1.0),
        uniform(&mut r, N * N, -0.8, 0.8),
    ];
    let n_ops = r.random_range(4..12);
    let plan: Vec<(u32, usize, usize, usize)> = (0..n_ops)
        .map(|k| (r.random_range(0..14), r.random_range(0..3 + k), r.random_range(0..3 + k), r.random_range(0..N)))
        .collect();
    let build: Build = Box::new(move |t, l| {
        let mut pool: Vec<Var> = l[..3].to_vec();
        for &(op, a, b, k) in &plan {
            let (a, b) = (pool[a], pool[b]);
            let out = match op {
                0 => t.add(a, b),
                1 => t.sub(a, b),
                2 => {
                    let m = t.mul(a, b);
                    t.tanh(m)
                }
                3 => t.tanh(a),
                4 => {
                    let s = t.scale(a, 0.5);
                    let e = t.exp(s);
                    t.tanh(e)
                }
                5 => {
                    let s = t.softplus(a);
                    let s = t.shift(s, 0.1);
                    t.log(s)
                }
                6 => {
                    let y = t.affine(l[3], a, Some(b), N, N);
                    t.tanh(y)
                }
                7 => {
                    let y = t.matvec(l[3], a, N, N);
                    t.tanh(y)
                }
                8 => {
                    let s = t.shift(a, 2.0);
                    let n = t.norm(s);
                    let n = t.scale(n, 0.25);
                    let y = t.scale_by(n, b);
                    t.tanh(y)
                }
                9 => {
                    let s = t.square(a);
                    t.tanh(s)
                }
                10 => {
                    let c = t.concat(&[a, b]);
                    t.slice(c, k, N)
                }
                11 => {
                    let idx: Vec<usize> = (0..N).map(|i| (i * (k + 1) + k) % N).collect();
                    t.gather(a, &idx)
                }
                12 => {
                    let ev: Vec<usize> = (0..N).step_by(2).collect();
                    let od: Vec<usize> = (1..N).step_by(2).collect();
                    let pa = t.slice(a, 0, ev.len());
                    let pb = t.slice(b, 0, od.len());
                    t.assemble(&[(pa, &ev), (pb, &od)], N)
                }
                _ => {
                    let s = t.sum(a);
                    let s = t.scale(s, 0.2);
                    let y = t.scale_by(s, b);
                    t.tanh(y)
                }
            };
            pool.push(out);
        }
        let last = *pool.last().unwrap();
        let tail = pool[pool.len().saturating_sub(3)..].to_vec();
        let all = t.concat(&tail);
        let sq = t.square(all);
        let reg = t.sum(sq);
        let reg = t.scale(reg, 0.1);
        let c = contract(t, last, seed);
        t.add(c, reg)
    });
    GradCase { name: format!("composite {seed}"), inputs, build }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Replaces entries from step `t + 1` on with fresh noise.
fn perturb_future(v: &[f64], width: usize, t: usize, r: &mut Rng) -> Vec<f64> {
    let mut out = v.to_vec();
    for x in out.iter_mut().skip((t + 1) * width) {
        *x = 3.0 * rng::normal(r);
    }
    out
}

/// One randomized future-perturbation trial; returns the names of the
/// components whose outputs up to the cut changed.
pub fn causality_trial(seed: u64) -> Vec<&'static str> {
    let mut r = rng::stream(seed, 5);
    let t_len = r.random_range(2..10);
    let d = r.random_range(1..3);
    let d_z = r.random_range(1..3);
    let cond_dim = if r.random_bool(0.5) { r.random_range(1..4) } else { 0 };
    let cfg = ModelConfig {
        d,
        t_len,
        d_z,
        hidden: r.random_range(2..9),
        flow: FlowConfig { n_layers: 2, hidden: 4, scale_cap: 3.0 },
        beta: 0.5,
        cond_dim,
        cond_embed: 3,
        output: if r.random_bool(0.5) { OutputLink::Exp } else { OutputLink::Identity },
    };
    let model = TcVae::new(cfg, seed).unwrap();
    let cut = r.random_range(0..t_len - 1);
    let cond = (cond_dim > 0).then(|| rng::normals(&mut r, cond_dim));
    let cond = cond.as_deref();
    let x = rng::normals(&mut r, t_len * d);
    let eps = rng::normals(&mut r, t_len * d_z);
    let x2 = perturb_future(&x, d, cut, &mut r);
    let eps2 = perturb_future(&eps, d_z, cut, &mut r);
    let mut bad = Vec::new();

    let mut store = ParamStore::new();
    let net = CausalNet::new(&mut store, "n", d, 6, 2, &mut r);
    let (a, b) = (net.apply(&store, &x).unwrap(), net.apply(&store, &x2).unwrap());
    if bits(&a[..(cut + 1) * 2]) != bits(&b[..(cut + 1) * 2]) {
        bad.push("causal net");
    }
    // composition of two causal maps
    let net2 = CausalNet::new(&mut store, "m", 2, 5, 3, &mut r);
    let (a, b) = (net2.apply(&store, &a).unwrap(), net2.apply(&store, &b).unwrap());
    if bits(&a[..(cut + 1) * 3]) != bits(&b[..(cut + 1) * 3]) {
        bad.push("composition");
    }

    let (za, zb) = (model.encode(&x, &eps).unwrap(), model.encode(&x2, &eps2).unwrap());
    let kz = (cut + 1) * d_z;
    if bits(&za[..kz]) != bits(&zb[..kz]) {
        bad.push("encoder");
    }
    let z2 = perturb_future(&za, d_z, cut, &mut r);
    let (ya, yb) = (model.decode(&za, cond).unwrap(), model.decode(&z2, cond).unwrap());
    let ky = (cut + 1) * d;
    if bits(&ya[..ky]) != bits(&yb[..ky]) {
        bad.push("decoder");
    }
    let (pa, pb) = (model.reconstruct(&x, &eps, cond).unwrap(), model.reconstruct(&x2, &eps2, cond).unwrap());
    if bits(&pa.y[..ky]) != bits(&pb.y[..ky]) || bits(&pa.z[..kz]) != bits(&pb.z[..kz]) {
        bad.push("reconstruction");
    }
    bad
}

/// A flow with non-trivial random parameters.
pub fn random_flow(d_z: usize, t_len: usize, n_layers: usize, seed: u64) -> (FlowPrior, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng::stream(seed, 1);
    let cfg = FlowConfig { n_layers, hidden: 8, scale_cap: 3.0 };
    let flow = FlowPrior::new(&mut store, "f", d_z, t_len, &cfg, &mut r);
    flow.randomize(&mut store, 0.4, &mut r);
    (flow, store)
}

/// `max |inverse(transform(z)) − z|` over random points.
pub fn flow_round_trip_error(flow: &FlowPrior, store: &ParamStore, n: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let z0: Vec<f64> = rng::normals(&mut r, flow.dim()).iter().map(|v| 2.0 * v).collect();
        let back = flow.inverse(store, &flow.transform(store, &z0));
        let fwd = flow.transform(store, &flow.inverse(store, &z0));
        for i in 0..z0.len() {
            worst = worst.max((back[i] - z0[i]).abs()).max((fwd[i] - z0[i]).abs());
        }
    }
    worst
}

/// `|log p(z) − [log φ(f⁻¹ z) + log|det ∂f⁻¹/∂z|]|` with the Jacobian taken
/// by central differences and its determinant by LU.
pub fn flow_logdet_error(flow: &FlowPrior, store: &ParamStore, z: &[f64]) -> f64 {
    let n = z.len();
    let h = 1e-5;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut up = z.to_vec();
        up[j] += h;
        let mut dn = z.to_vec();
        dn[j] -= h;
        let (a, b) = (flow.inverse(store, &up), flow.inverse(store, &dn));
        for i in 0..n {
            jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    let numeric = tcvae::flow::std_normal_log_density(&flow.inverse(store, z)) + jac.determinant().abs().ln();
    (flow.log_prob(store, z).unwrap() - numeric).abs()
}

/// `∫ p(z) dz` for a one-dimensional flow by the trapezoid rule on `[-lim, lim]`.
pub fn flow_mass_1d(flow: &FlowPrior, store: &ParamStore, lim: f64, n: usize) -> f64 {
    let h = 2.0 * lim / n as f64;
    (0..=n)
        .map(|i| {
            let z = -lim + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * flow.log_prob(store, &[z]).unwrap().exp()
        })
        .sum::<f64>()
        * h
}

/// Random weights on `k` atoms summing to one exactly enough for
/// `DiscreteMeasure::new`.
pub fn random_weights(r: &mut Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    w
}

/// A grid-valued path in the unit ball of `Σ_t ‖x_t‖`. Coarse grids make
/// prefixes collide, so the measures have genuine branching.
pub fn random_atom(r: &mut Rng, t_len: usize, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (t_len as f64 * (dim as f64).sqrt());
    (0..t_len * dim).map(|_| r.random_range(-2i32..=2) as f64 * 0.5 * scale).collect()
}

/// Two measures on `T × dim` with at most `max_atoms` atoms each. About half
/// the time `nu` contains every atom of `mu`, so KL(μ‖ν) is finite.
pub fn random_pair(seed: u64, t_len: usize, dim: usize, max_atoms: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut r = rng::stream(seed, 11);
    let k = r.random_range(1..=max_atoms);
    let atoms: Vec<Vec<f64>> = (0..k).map(|_| random_atom(&mut r, t_len, dim)).collect();
    let mu = DiscreteMeasure::new(atoms.concat(), random_weights(&mut r, k), t_len, dim).unwrap();
    let mut nu_atoms: Vec<Vec<f64>> = if r.random_bool(0.5) { atoms } else { Vec::new() };
    let extra = r.random_range(usize::from(nu_atoms.is_empty())..=max_atoms - nu_atoms.len());
    nu_atoms.extend((0..extra).map(|_| random_atom(&mut r, t_len, dim)));
    let l = nu_atoms.len();
    let nu = DiscreteMeasure::new(nu_atoms.concat(), random_weights(&mut r, l), t_len, dim).unwrap();
    (mu, nu)
}

/// Exact 3×3 transport value by enumerating every 5-cell basis and solving
/// each by peeling rows/columns that have a single basis cell left.
pub fn ot_3x3_enumerate(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 9) {
        if mask.count_ones() != 5 {
            continue;
        }
        let mut cells: Vec<usize> = (0..9).filter(|c| mask >> c & 1 == 1).collect();
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let mut plan = [0.0f64; 9];
        let mut ok = true;
        while !cells.is_empty() {
            let lone = cells.iter().position(|&c| {
                cells.iter().filter(|&&o| o / 3 == c / 3).count() == 1 || cells.iter().filter(|&&o| o % 3 == c % 3).count() == 1
            });
            let Some(p) = lone else {
                ok = false;
                break;
            };
            let c = cells.remove(p);
            let (i, j) = (c / 3, c % 3);
            let row_lone = !cells.iter().any(|&o| o / 3 == i);
            let v = if row_lone { ra[i] } else { rb[j] };
            plan[c] = v;
            ra[i] -= v;
            rb[j] -= v;
        }
        let resid = ra.iter().chain(&rb).map(|v| v.abs()).fold(0.0, f64::max);
        if ok && resid < 1e-12 && plan.iter().all(|v| *v >= -1e-14) {
            best = best.min(plan.iter().zip(cost).map(|(p, c)| p * c).sum());
        }
    }
    best
}
