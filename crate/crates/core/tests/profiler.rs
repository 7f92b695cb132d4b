mod common;

use common::*;
use faer::Mat;
use proptest::prelude::*;
use qsfa::data::{self, DerivativeSpec, PairPolicy, PreprocessConfig};
use qsfa::profiler::*;

fn cost(kappa: f64, mu: f64, theta: f64, delta: f64, epsilon: f64, eta: f64, ratio: f64) -> CostEstimate {
    estimate_cost(CostInputs {
        kappa,
        mu_x: mu,
        mu_xdot: 2.0 * mu,
        theta,
        delta,
        epsilon,
        eta,
        classes: 10,
        ratio,
    })
    .unwrap()
}

#[test]
fn identity_and_rank_one() {
    let m = Mat::<f64>::identity(6, 6);
    let p = MatrixProfile::of(m.as_ref(), 0.5).unwrap();
    assert!((p.frob - 6f64.sqrt()).abs() < 1e-12);
    assert_eq!((p.rank, p.kappa, p.kappa_t), (6, 1.0, 1.0));
    assert_eq!(p.mu, 1.0);

    let u = [1.0, -2.0, 2.0];
    let v = [3.0, 0.0, 4.0, 0.0];
    let r1 = Mat::from_fn(3, 4, |i, j| u[i] * v[j]);
    let p = MatrixProfile::of(r1.as_ref(), 0.995).unwrap();
    assert_eq!(p.rank, 1);
    assert!((p.scale - 15.0).abs() < 1e-10);
    assert!((p.frob - 1.0).abs() < 1e-12);
    assert!((p.kappa - 1.0).abs() < 1e-12);
    assert!((p.max_l1 - 14.0 / 15.0).abs() < 1e-12);
}

#[test]
fn spectrum_matches_dense_svd() {
    let m = gaussian(40, 12, 3);
    let p = MatrixProfile::of(m.as_ref(), 0.75).unwrap();
    let sv = to_na(m.as_ref()).singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in p.spectrum.iter().zip(&s) {
        assert!((a - b).abs() <= 1e-9 * s[0]);
    }
    assert!((p.kappa - s[0] / s[11]).abs() <= 1e-8 * p.kappa);
    assert!((p.kappa_t - s[0] / s[8]).abs() <= 1e-8 * p.kappa_t);
    let frob = to_na(m.as_ref()).norm() / s[0];
    assert!((p.frob - frob).abs() <= 1e-12 * frob);
}

#[test]
fn mu_grid_matches_direct_sums() {
    let m = gaussian(7, 5, 8);
    let p = MatrixProfile::of(m.as_ref(), 1.0).unwrap();
    let e = entry_stats(&m.as_ref(), p.scale);
    let a = to_na(m.as_ref()) / p.scale;
    let s = |q: f64, rows: bool| -> f64 {
        let (outer, inner) = if rows { (a.nrows(), a.ncols()) } else { (a.ncols(), a.nrows()) };
        (0..outer)
            .map(|o| {
                (0..inner)
                    .map(|t| {
                        let v = if rows { a[(o, t)] } else { a[(t, o)] }.abs();
                        if v == 0.0 { 0.0 } else { v.powf(q) }
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    for (k, &g) in e.mu_grid.iter().enumerate() {
        let pp = k as f64 * MU_GRID_STEP;
        let want = (s(2.0 * pp, true) * s(2.0 * (1.0 - pp), false)).sqrt();
        assert!((g - want).abs() <= 1e-10 * want, "p = {pp}");
    }
}

#[test]
fn mu_sits_between_spectral_and_frobenius() {
    for seed in 0..20 {
        let m = gaussian(15, 9, seed);
        let p = MatrixProfile::of(m.as_ref(), 1.0).unwrap();
        assert!(p.mu <= p.frob + 1e-12);
        let e = entry_stats(&m.as_ref(), p.scale);
        assert!(e.mu_grid.iter().all(|&g| g >= 1.0 - 1e-9));
        assert!(p.max_l1 >= 1.0 / (9f64).sqrt() - 1e-12);
    }
}

#[test]
fn sparse_matrix_prefers_a_grid_point() {
    let m = Mat::<f64>::identity(50, 50);
    let e = entry_stats(&m.as_ref(), 1.0);
    assert_eq!(e.mu, 1.0);
    assert!(e.mu_p.is_some());
}

#[test]
fn kappa_threshold_is_monotone() {
    let m = gaussian(30, 20, 4);
    let p = MatrixProfile::of(m.as_ref(), 1.0).unwrap();
    let mut last = 0.0;
    for k in 1..=20 {
        let t = kappa_threshold(&p.spectrum, p.rank, k as f64 / 20.0);
        assert!(t >= last);
        last = t;
    }
    assert_eq!(last, p.kappa);
    assert_eq!(kappa_threshold(&[1.0], 0, 0.5), f64::INFINITY);
}

proptest! {
    #[test]
    fn permutations_do_not_change_the_profile(seed in 0u64..1000, shift in 0usize..9, cshift in 0usize..5) {
        let m = gaussian(9, 5, seed);
        let perm = Mat::from_fn(9, 5, |i, j| m[((i + shift) % 9, (j + cshift) % 5)]);
        let a = MatrixProfile::of(m.as_ref(), 0.8).unwrap();
        let b = MatrixProfile::of(perm.as_ref(), 0.8).unwrap();
        prop_assert!((a.frob - b.frob).abs() <= 1e-10);
        prop_assert!((a.max_l1 - b.max_l1).abs() <= 1e-10);
        prop_assert!((a.mu - b.mu).abs() <= 1e-10);
        prop_assert!((a.kappa - b.kappa).abs() <= 1e-7 * a.kappa);
        prop_assert!((a.kappa_t - b.kappa_t).abs() <= 1e-7 * a.kappa_t);
    }

    #[test]
    fn cost_grows_with_every_hardness_parameter(
        kappa in 1.0f64..100.0,
        mu in 0.5f64..50.0,
        theta in 0.05f64..1.0,
        delta in 0.01f64..0.5,
        ratio in 1.0f64..20.0,
        bump in 1.01f64..3.0,
    ) {
        let base = cost(kappa, mu, theta, delta, 1e-5, 0.1, ratio).qsfa_cost;
        prop_assert!(cost(kappa * bump, mu, theta, delta, 1e-5, 0.1, ratio).qsfa_cost > base);
        prop_assert!(cost(kappa, mu * bump, theta, delta, 1e-5, 0.1, ratio).qsfa_cost > base);
        prop_assert!(cost(kappa, mu, theta / bump, delta, 1e-5, 0.1, ratio).qsfa_cost > base);
        prop_assert!(cost(kappa, mu, theta, delta / bump, 1e-5, 0.1, ratio).qsfa_cost > base);
        prop_assert!(cost(kappa, mu, theta, delta, 1e-5 / bump, 0.1, ratio).qsfa_cost > base);
        prop_assert!(cost(kappa, mu, theta, delta, 1e-5, 0.1, ratio * bump).qsfa_cost > base);
    }

    #[test]
    fn halving_eta_doubles_the_classifier_cost(eta in 0.01f64..0.45) {
        let a = cost(30.0, 5.0, 0.5, 0.05, 1e-5, eta, 8.0);
        let b = cost(30.0, 5.0, 0.5, 0.05, 1e-5, eta / 2.0, 8.0);
        prop_assert!((b.classifier_cost / a.classifier_cost - 2.0).abs() < 1e-12);
        prop_assert_eq!(a.qsfa_cost, b.qsfa_cost);
    }
}

#[test]
fn cost_plug_in_values() {
    let unit = estimate_cost(CostInputs {
        kappa: 1.0,
        mu_x: 1.0,
        mu_xdot: 1.0,
        theta: 1.0,
        delta: 1.0,
        epsilon: (-1.0f64).exp(),
        eta: 1.0,
        classes: 1,
        ratio: 1.0,
    })
    .unwrap();
    assert!((unit.qsfa_cost - 3.0).abs() < 1e-12);

    let mnist = estimate_cost(CostInputs {
        kappa: 32.0,
        mu_x: 22.0,
        mu_xdot: 102.0,
        theta: 0.38,
        delta: 0.054,
        epsilon: 1e-5,
        eta: 0.1,
        classes: 10,
        ratio: 10.0,
    })
    .unwrap();
    let expected = (32.0 * 22.0 * 1e5f64.ln() + 124.0 / (0.054 * 0.38)) * 10.0 * 100.0;
    assert!((mnist.classifier_cost / expected - 1.0).abs() < 1e-12);
    assert!((1e6..=1e8).contains(&mnist.classifier_cost), "{}", mnist.classifier_cost);
    assert!((mnist.classifier_cost - 1.4148e7).abs() < 1e3);
}

#[test]
fn cost_rejects_nonsense() {
    let ok = CostInputs {
        kappa: 1.0,
        mu_x: 1.0,
        mu_xdot: 1.0,
        theta: 0.5,
        delta: 0.1,
        epsilon: 1e-5,
        eta: 0.1,
        classes: 10,
        ratio: 2.0,
    };
    assert!(estimate_cost(ok).is_ok());
    assert!(estimate_cost(CostInputs { theta: 0.0, ..ok }).is_err());
    assert!(estimate_cost(CostInputs { epsilon: 1.0, ..ok }).is_err());
    assert!(estimate_cost(CostInputs { kappa: f64::INFINITY, ..ok }).is_err());
    let row = estimate_cost(ok).unwrap().csv_row();
    assert_eq!(row.split(',').count(), CostEstimate::CSV_HEADER.split(',').count());
}

#[test]
fn pair_profile_matches_materialized_derivatives() {
    let raw = synthetic_digits(200, 6, 2);
    let lm = raw.labeled().unwrap();
    let spec = DerivativeSpec {
        pairs_per_class: PairPolicy::Fixed(60),
        seed: 1,
    };
    let (d, pairs) = data::build_derivatives(&lm, &spec).unwrap();
    let a = MatrixProfile::of_pairs(lm.rows.as_ref(), &pairs, 0.9).unwrap();
    let b = MatrixProfile::of(d.rows.as_ref(), 0.9).unwrap();
    assert!((a.frob - b.frob).abs() <= 1e-9);
    assert!((a.max_l1 - b.max_l1).abs() <= 1e-9);
    assert!((a.mu - b.mu).abs() <= 1e-9);
    assert!((a.kappa - b.kappa).abs() <= 1e-6 * b.kappa);
}

#[test]
fn three_point_sweeps() {
    let raw = synthetic_digits(300, 6, 5);
    let base = PreprocessConfig {
        pca_dim: Some(8),
        ..PreprocessConfig::default()
    };
    let spec = DerivativeSpec {
        pairs_per_class: PairPolicy::Fixed(100),
        seed: 0,
    };
    let by_n = sensitivity_sweep(&raw, &base, &spec, SweepAxis::N, &[100, 200, 300], 0.995).unwrap();
    assert_eq!(by_n.iter().map(|p| p.axis_value).collect::<Vec<_>>(), vec![100, 200, 300]);
    for p in &by_n {
        assert_eq!(p.x.spectrum.len(), 44);
        assert!((p.x.spectrum[0] - 1.0).abs() < 1e-9);
        assert!(p.x.frob >= 1.0 && p.xdot.frob > 0.0);
    }
    let by_d = sensitivity_sweep(&raw, &base, &spec, SweepAxis::D, &[4, 6, 8], 0.995).unwrap();
    let dims: Vec<usize> = by_d.iter().map(|p| p.x.spectrum.len()).collect();
    assert_eq!(dims, vec![14, 27, 44]);
    let row = profile_csv_row(4, "x", &by_d[0].x);
    assert_eq!(row.split(',').count(), PROFILE_CSV_HEADER.split(',').count());
    assert!(sensitivity_sweep(&raw, &base, &spec, SweepAxis::N, &[], 0.995).is_err());
    assert!(SweepAxis::parse("q").is_err());
}
