use rand::Rng as _;
use tcvae::flow::FlowConfig;
use tcvae::rng;
use tcvae::tcvae::{ModelConfig, TcVae, SIGMA_FLOOR};

fn model(d: usize, t_len: usize, d_z: usize, seed: u64) -> TcVae {
    let cfg = ModelConfig {
        d,
        t_len,
        d_z,
        hidden: 5,
        flow: FlowConfig { n_layers: 2, hidden: 4, scale_cap: 3.0 },
        beta: 0.5,
        cond_dim: 0,
        cond_embed: 1,
        ..Default::default()
    };
    TcVae::new(cfg, seed).unwrap()
}

/// Zeroes every weight (identity prior, constant nets) and sets the encoder to
/// output `μ = m`, `σ = s` at every step.
fn constant_posterior(m: &mut TcVae, mean: &[f64], s: f64) {
    m.store.fill(0.0);
    let raw = ((s - SIGMA_FLOOR).exp() - 1.0).ln();
    m.store.data_mut(m.enc_mu.head.b).copy_from_slice(mean);
    m.store.data_mut(m.enc_sigma.head.b).iter_mut().for_each(|b| *b = raw);
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn latent_term_estimates_gaussian_kl() {
    // with an identity flow the prior is N(0, I), so E[latent] = KL(q ‖ p)
    for (mean, s) in [([0.8, -0.3], 1.0), ([0.2, 0.5], 0.6)] {
        let t_len = 3;
        let mut m = model(1, t_len, 2, 1);
        constant_posterior(&mut m, &mean, s);
        let kl = t_len as f64 * mean.iter().map(|mk| 0.5 * (s * s + mk * mk - 1.0 - 2.0 * f64::ln(s))).sum::<f64>();
        let n = 20_000;
        let mut r = rng::stream(5, 0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| rng::normals(&mut r, t_len)).collect();
        let eps: Vec<Vec<f64>> = (0..n).map(|_| rng::normals(&mut r, 2 * t_len)).collect();
        let batch: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let lat: Vec<f64> = m.batch_terms_each(&batch, &eps, None).unwrap().into_iter().map(|(_, l)| l).collect();
        let (est, se) = mean_and_se(&lat);
        assert!((est - kl).abs() < 3.0 * se, "{est} vs {kl} (se {se})");
    }
}

#[test]
fn latent_term_vanishes_when_posterior_is_prior() {
    let mut m = model(2, 4, 1, 2);
    constant_posterior(&mut m, &[0.0], 1.0);
    let mut r = rng::stream(6, 0);
    for _ in 0..50 {
        let x = rng::normals(&mut r, 8);
        let eps = rng::normals(&mut r, 4);
        let p = m.reconstruct(&x, &eps, None).unwrap();
        assert!(p.latent.abs() < 1e-12, "{}", p.latent);
    }
}

#[test]
fn single_step_reconstruction_is_euclidean_distance() {
    let mut m = model(2, 1, 1, 3);
    m.store.fill(0.0);
    let v = [0.3, -0.4];
    m.store.data_mut(m.dec.head.b).copy_from_slice(&v);
    let p = m.reconstruct(&[0.0, 0.0], &[0.7], None).unwrap();
    assert_eq!(p.y, v);
    assert!((p.rec - 0.5).abs() < 1e-15);
    let p = m.reconstruct(&[1.3, 0.0], &[0.1], None).unwrap();
    assert!((p.rec - f64::hypot(1.0, 0.4)).abs() < 1e-15);
}

#[test]
fn reconstruction_sums_per_step_norms() {
    let m = model(2, 5, 2, 4);
    let mut r = rng::stream(7, 0);
    let x = rng::normals(&mut r, 10);
    let eps = rng::normals(&mut r, 10);
    let p = m.reconstruct(&x, &eps, None).unwrap();
    let want: f64 = (0..5).map(|t| f64::hypot(x[2 * t] - p.y[2 * t], x[2 * t + 1] - p.y[2 * t + 1])).sum();
    assert!((p.rec - want).abs() < 1e-12);
    assert_eq!(m.decode(&p.z, None).unwrap(), p.y);
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let mut m = model(1, 4, 1, 8);
    let mut r = rng::stream(9, 0);
    m.prior.randomize(&mut m.store, 0.3, &mut r);
    let x: Vec<Vec<f64>> = (0..3).map(|_| rng::normals(&mut r, 4)).collect();
    let eps: Vec<Vec<f64>> = (0..3).map(|_| rng::normals(&mut r, 4)).collect();
    let batch: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
    let beta = 0.7;
    let (_, _, grads) = m.loss_and_grad(&batch, &eps, None, beta).unwrap();
    let loss = |m: &TcVae| {
        let (rec, lat, _) = m.loss_and_grad(&batch, &eps, None, beta).unwrap();
        rec + beta * lat
    };
    for _ in 0..40 {
        let k = r.random_range(0..m.store.len());
        let i = r.random_range(0..m.store.tensors[k].data.len());
        let x0 = m.store.tensors[k].data[i];
        let h = 1e-6;
        m.store.tensors[k].data[i] = x0 + h;
        let up = loss(&m);
        m.store.tensors[k].data[i] = x0 - h;
        let dn = loss(&m);
        m.store.tensors[k].data[i] = x0;
        let fd = (up - dn) / (2.0 * h);
        let g = grads[k][i];
        let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
        assert!(err < 1e-5, "{} [{i}]: {g} vs {fd}", m.store.tensors[k].name);
    }
}
