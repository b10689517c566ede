use proptest::prelude::*;
use tcvae::path_data::{make_windows, normalize_by_start, normalize_to_ball, weighted_hist_vol};
use tcvae::PathSet;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn path_set() -> impl Strategy<Value = PathSet> {
    (1usize..6, 1usize..7, 1usize..3).prop_flat_map(|(n, t, d)| {
        prop::collection::vec(prop_oneof![-100.0..-0.01f64, 0.01..100.0f64], n * t * d)
            .prop_map(move |v| PathSet::new(v, n, t, d, 0.1).unwrap())
    })
}

proptest! {
    #[test]
    fn stride_t_windows_tile_the_prefix(series in prop::collection::vec(-1e3..1e3f64, 1..80), t in 1usize..10) {
        prop_assume!(series.len() >= t);
        let w = make_windows(&series, t, t, 1.0).unwrap();
        prop_assert_eq!(w.n_paths, series.len() / t);
        prop_assert_eq!(&w.values[..], &series[..w.n_paths * t]);
    }

    #[test]
    fn window_count(n in 1usize..200, t in 1usize..20, stride in 1usize..7) {
        prop_assume!(n >= t);
        let series: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let w = make_windows(&series, t, stride, 1.0).unwrap();
        prop_assert_eq!(w.n_paths, (n - t) / stride + 1);
        for i in 0..w.n_paths {
            prop_assert_eq!(w.path(i)[0], (i * stride) as f64);
        }
    }

    #[test]
    fn divide_by_start_round_trip(p in path_set()) {
        let n = normalize_by_start(&p).unwrap();
        for i in 0..n.n_paths {
            for c in 0..n.dim {
                prop_assert_eq!(n.get(i, 0, c), 1.0);
            }
        }
        let back = n.normalization.invert(&n).unwrap();
        for (a, b) in back.values.iter().zip(&p.values) {
            prop_assert!(rel_close(*a, *b, 1e-12), "{} vs {}", a, b);
        }
    }

    #[test]
    fn ball_normalization_norm_and_inverse(p in path_set()) {
        let n = normalize_to_ball(&p).unwrap();
        for q in n.paths() {
            prop_assert!(q.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
        let back = n.normalization.invert(&n).unwrap();
        let scale = p.max_abs().max(1.0);
        for (a, b) in back.values.iter().zip(&p.values) {
            prop_assert!((a - b).abs() <= 1e-9 * scale, "{} vs {}", a, b);
        }
    }

    #[test]
    fn hist_vol_positively_homogeneous(
        r in prop::collection::vec(-0.2..0.2f64, 1..60),
        c in 1e-3..1e3f64,
        alpha in 1.01..4.0f64,
        delta in 0.1..5.0f64,
        trunc in 1usize..30,
    ) {
        let base = weighted_hist_vol(&r, alpha, delta, trunc).unwrap();
        let scaled: Vec<f64> = r.iter().map(|x| c * x).collect();
        let out = weighted_hist_vol(&scaled, alpha, delta, trunc).unwrap();
        prop_assert_eq!(out.len(), r.len());
        for (a, b) in out.iter().zip(&base) {
            prop_assert!(rel_close(*a, c * b, 1e-12) || (*a == 0.0 && *b == 0.0));
        }
    }
}
