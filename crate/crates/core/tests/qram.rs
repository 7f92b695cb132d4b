mod common;

use common::*;
use faer::Mat;
use proptest::prelude::*;
use qsfa::qram::{AmplitudeTree, QramStore};
use qsfa::rng::stream;
use rand::Rng;

fn ceil_log2(n: usize) -> usize {
    n.max(1).next_power_of_two().trailing_zeros() as usize
}

fn store_from(rows: &Mat<f64>, labels: &[usize], classes: usize) -> QramStore {
    QramStore::build(rows.as_ref(), labels, classes).unwrap()
}

#[test]
fn hand_tree_three_four() {
    let t = AmplitudeTree::new(&[3.0, -4.0]);
    assert_eq!(t.total(), 25.0);
    assert_eq!(t.depth(), 1);
    assert_eq!(t.amplitudes().unwrap(), vec![0.6, -0.8]);
}

#[test]
fn odd_length_tree_is_padded() {
    let t = AmplitudeTree::new(&[1.0, 2.0, 2.0]);
    assert_eq!(t.depth(), 2);
    assert_eq!(t.node_count(), 7);
    assert_eq!(t.total(), 9.0);
    let mut rng = stream(1, "test", &[]);
    for _ in 0..2000 {
        assert!(t.sample(&mut rng).unwrap() < 3);
    }
}

#[test]
fn zero_tree_cannot_be_sampled() {
    let t = AmplitudeTree::new(&[0.0, 0.0]);
    assert!(t.sample(&mut stream(0, "test", &[])).is_err());
    assert!(t.amplitudes().is_err());
}

#[test]
fn store_norms_match_direct_sums() {
    let (x, labels) = blobs(3, 7, 5, 0.8, 4);
    let s = store_from(&x, &labels, 3);
    let direct: f64 = (0..x.nrows()).flat_map(|i| (0..5).map(move |j| (i, j))).map(|(i, j)| x[(i, j)].powi(2)).sum();
    assert!((s.frobenius_sq() - direct).abs() <= 1e-12 * direct);
    for k in 0..3 {
        let part: f64 = s.members(k).iter().map(|&i| (0..5).map(|j| x[(i, j)].powi(2)).sum::<f64>()).sum();
        assert!((s.class_frobenius_sq(k) - part).abs() <= 1e-12 * part);
        let amps = s.class_norm_amplitudes(k).unwrap();
        assert!((amps.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let amps = s.row_amplitudes(2).unwrap();
    let norm = (0..5).map(|j| x[(2, j)].powi(2)).sum::<f64>().sqrt();
    for j in 0..5 {
        assert!((amps[j] - x[(2, j)] / norm).abs() < 1e-14);
    }
}

#[test]
fn ten_thousand_updates_keep_invariants() {
    let (n, d, classes) = (40, 9, 4);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut current = gaussian(n, d, 77);
    let mut store = store_from(&current, &labels, classes);
    let mut rng = stream(5, "fuzz", &[]);
    let bound = (ceil_log2(d) + 1) + (ceil_log2(n / classes) + 1) + (ceil_log2(classes) + 1);
    for step in 0..10_000 {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..d));
        let v = if rng.random_bool(0.05) { 0.0 } else { rng.random_range(-3.0..3.0) };
        current[(i, j)] = v;
        let touched = store.update_entry(i, j, v).unwrap();
        assert!(touched <= bound, "update touched {touched} nodes, bound {bound}");
        if step % 1000 == 999 {
            assert_eq!(store.audit(), 0.0);
            let fresh = store_from(&current, &labels, classes);
            assert!((store.frobenius_sq() - fresh.frobenius_sq()).abs() <= 1e-9 * fresh.frobenius_sq());
            for k in 0..classes {
                let (a, b) = (store.class_frobenius_sq(k), fresh.class_frobenius_sq(k));
                assert!((a - b).abs() <= 1e-9 * b);
            }
            for r in 0..n {
                for c in 0..d {
                    assert_eq!(store.entry(r, c).unwrap(), current[(r, c)]);
                }
            }
        }
    }
}

#[test]
fn out_of_range_updates_fail() {
    let x = gaussian(4, 3, 1);
    let mut s = store_from(&x, &[0, 1, 0, 1], 2);
    assert!(s.update_entry(4, 0, 1.0).is_err());
    assert!(s.update_entry(0, 3, 1.0).is_err());
    assert!(s.row_amplitudes(9).is_err());
    assert!(s.class_norm_amplitudes(2).is_err());
    assert!(QramStore::build(x.as_ref(), &[0, 1, 2, 0], 2).is_err());
}

#[test]
fn leaf_sampling_passes_chi_square() {
    let values = [3.0, -1.0, 0.5, 2.0, 0.0, -2.5, 1.5];
    let t = AmplitudeTree::new(&values);
    let total: f64 = values.iter().map(|v| v * v).sum();
    let p: Vec<f64> = values.iter().map(|v| v * v / total).collect();
    let mut counts = vec![0; values.len()];
    let mut rng = stream(9, "chi", &[]);
    for _ in 0..100_000 {
        counts[t.sample(&mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[4], 0);
    let stat = chi_square(&counts, &p);
    assert!(stat < chi_square_critical(5), "chi-square {stat}");
}

#[test]
fn row_index_sampling_passes_chi_square() {
    let x = Mat::from_fn(6, 2, |i, j| (i + 1) as f64 * if j == 0 { 1.0 } else { 0.5 });
    let labels = [0, 1, 0, 1, 0, 1];
    let s = store_from(&x, &labels, 2);
    let members = s.members(1).to_vec();
    let weights: Vec<f64> = members.iter().map(|&i| s.row_norm_sq(i)).collect();
    let total: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut counts = vec![0; members.len()];
    let mut rng = stream(3, "test", &[]);
    for _ in 0..60_000 {
        let i = s.sample_row_index(1, &mut rng).unwrap();
        counts[members.iter().position(|&m| m == i).unwrap()] += 1;
    }
    assert!(chi_square(&counts, &p) < chi_square_critical(members.len() - 1));
}

#[test]
fn snapshot_round_trip_is_exact() {
    let (x, labels) = blobs(3, 5, 6, 0.4, 12);
    let mut s = store_from(&x, &labels, 3);
    s.update_entry(3, 2, -7.25).unwrap();
    let bytes = s.save(Vec::new()).unwrap();
    let back = QramStore::load(bytes.as_slice()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.save(Vec::new()).unwrap(), bytes);
}

#[test]
fn damaged_snapshots_are_rejected() {
    let (x, labels) = blobs(2, 3, 3, 0.4, 12);
    let bytes = store_from(&x, &labels, 2).save(Vec::new()).unwrap();
    assert!(QramStore::load(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(QramStore::load(bad.as_slice()).is_err());
}

proptest! {
    #[test]
    fn amplitudes_are_unit_and_signed(values in prop::collection::vec(-100.0f64..100.0, 1..40)) {
        prop_assume!(values.iter().any(|v| v.abs() > 1e-6));
        let t = AmplitudeTree::new(&values);
        let a = t.amplitudes().unwrap();
        let norm: f64 = a.iter().map(|v| v * v).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        for (v, a) in values.iter().zip(&a) {
            prop_assert!(*v == 0.0 || v.signum() == a.signum());
        }
        prop_assert_eq!(t.depth(), ceil_log2(values.len()));
    }

    #[test]
    fn random_updates_match_rebuild(
        updates in prop::collection::vec((0usize..16, -5.0f64..5.0), 1..200)
    ) {
        let mut t = AmplitudeTree::new(&[1.0; 16]);
        let mut v = vec![1.0; 16];
        for (i, x) in updates {
            let touched = t.set(i, x);
            prop_assert_eq!(touched, 5);
            v[i] = x;
        }
        let fresh = AmplitudeTree::new(&v);
        prop_assert_eq!(t.audit(), 0.0);
        prop_assert!((t.total() - fresh.total()).abs() <= 1e-10 * fresh.total().max(1.0));
        prop_assert_eq!(t.values(), fresh.values());
    }
}
