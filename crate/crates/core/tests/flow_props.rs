mod common;

use common::{flow_logdet_error, flow_mass_1d, flow_round_trip_error, random_flow};
use proptest::prelude::*;
use tcvae::flow::{std_normal_log_density, FlowConfig, FlowPrior};
use tcvae::nn::ParamStore;
use tcvae::rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn round_trip(d_z in 1usize..3, t_len in 1usize..4, layers in 1usize..7, seed in any::<u64>()) {
        let (flow, store) = random_flow(d_z, t_len, layers, seed);
        let err = flow_round_trip_error(&flow, &store, 5, seed);
        prop_assert!(err < 1e-9, "{}", err);
    }

    #[test]
    fn log_det_matches_numerical_jacobian(d_z in 1usize..3, t_len in 1usize..4, layers in 1usize..5, seed in any::<u64>()) {
        let (flow, store) = random_flow(d_z, t_len, layers, seed);
        let mut r = rng::stream(seed, 3);
        let z = rng::normals(&mut r, flow.dim());
        let err = flow_logdet_error(&flow, &store, &z);
        prop_assert!(err < 1e-4, "{}", err);
    }
}

#[test]
fn identity_init_is_standard_normal() {
    let mut store = ParamStore::new();
    let mut r = rng::stream(0, 0);
    let flow = FlowPrior::new(&mut store, "f", 2, 3, &FlowConfig::default(), &mut r);
    let z = rng::normals(&mut r, 6);
    assert_eq!(flow.transform(&store, &z), z);
    assert!((flow.log_prob(&store, &z).unwrap() - std_normal_log_density(&z)).abs() < 1e-12);
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    for seed in 0..5 {
        let (flow, store) = random_flow(1, 1, 4, seed);
        let mass = flow_mass_1d(&flow, &store, 60.0, 60_000);
        assert!((mass - 1.0).abs() < 1e-3, "seed {seed}: {mass}");
    }
}

#[test]
fn two_dimensional_density_integrates_to_one() {
    // both coordinates get transformed here, unlike the 1-D case
    let (flow, store) = random_flow(1, 2, 4, 9);
    let (lim, n) = (25.0, 500);
    let h = 2.0 * lim / n as f64;
    let mut mass = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * if j == 0 || j == n { 0.5 } else { 1.0 };
            let z = [-lim + i as f64 * h, -lim + j as f64 * h];
            mass += w * flow.log_prob(&store, &z).unwrap().exp();
        }
    }
    mass *= h * h;
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn samples_pulled_back_look_standard_normal() {
    let (flow, store) = random_flow(1, 3, 4, 4);
    let zs = flow.sample(&store, 4000, 8);
    let mut u: Vec<f64> = zs.iter().map(|z| flow.inverse(&store, z)[1]).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    use statrs::distribution::ContinuousCDF;
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = normal.cdf(*x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value ≈ 1.63/√n
    assert!(ks < 1.63 / n.sqrt(), "{ks}");
}
