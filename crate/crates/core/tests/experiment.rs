mod common;

use std::fs;
use std::path::Path;

use common::*;
use qsfa::data;
use qsfa::experiment::*;
use qsfa::profiler::SweepAxis;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_overrides(&[
        "--pca-dim", "10",
        "--pairs-per-class", "400",
        "--majority-rounds", "3",
        "--output-dir", out.to_str().unwrap(),
    ])
    .unwrap();
    c
}

fn small_data() -> Datasets {
    Datasets::from_parts(synthetic_digits(600, 8, 1), synthetic_digits(150, 8, 2))
}

fn write_idx(dir: &Path, cfg: &ExperimentConfig) {
    for (ds, img, lab) in [
        (synthetic_digits(600, 8, 1), &cfg.train_images, &cfg.train_labels),
        (synthetic_digits(150, 8, 2), &cfg.test_images, &cfg.test_labels),
    ] {
        fs::write(dir.join(img), data::encode_idx_images(ds.images.as_ref(), 8, 8)).unwrap();
        fs::write(dir.join(lab), data::encode_idx_labels(&ds.labels)).unwrap();
    }
}

#[test]
fn config_text_round_trips() {
    let mut c = ExperimentConfig::default();
    c.apply_overrides(&["--theta=0.25", "--kappa", "full", "--shots", "123", "--mode", "oracle", "--test-subset", "50"])
        .unwrap();
    let back = ExperimentConfig::parse(&c.to_text()).unwrap();
    assert_eq!(back, c);
    let text = c.to_text();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(keys, CONFIG_KEYS);
}

#[test]
fn config_rejects_bad_input() {
    assert!(ExperimentConfig::parse("colour = blue").is_err());
    assert!(ExperimentConfig::parse("majority_rounds = 4").is_err());
    assert!(ExperimentConfig::parse("eta = 0.5").is_err());
    assert!(ExperimentConfig::parse("poly_degree = 4").is_err());
    assert!(ExperimentConfig::parse("shots = 0").is_err());
    assert!(ExperimentConfig::parse("just words").is_err());
    assert!(ExperimentConfig::default().apply_overrides(&["--seed"]).is_err());
    assert!(ExperimentConfig::default().apply_overrides(&["seed", "1"]).is_err());
    let c = ExperimentConfig::parse("# comment\nseed = 7 # trailing\n\nmode = raw\n").unwrap();
    assert_eq!((c.seed, c.mode), (7, RunMode::Raw));
}

#[test]
fn config_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.conf");
    fs::write(&p, "pca_dim = 12\npoly_degree = 3\n").unwrap();
    let c = ExperimentConfig::load(&p).unwrap();
    assert_eq!((c.pca_dim, c.poly_degree), (Some(12), 3));
    assert!(ExperimentConfig::load(dir.path().join("missing")).is_err());
}

#[test]
fn oracle_and_noisy_runs_classify_synthetic_digits() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    for mode in ["oracle", "noisy"] {
        let mut c = small_config(dir.path());
        c.set("mode", mode).unwrap();
        let out = run(&c, &data).unwrap();
        assert_eq!(out.summary.n_test, 150);
        assert_eq!(out.summary.input_dim, 65);
        assert!(out.summary.accuracy > 0.9, "{mode}: {}", out.summary.accuracy);
        assert_eq!(out.records.len(), 150);
        assert!(out.records.windows(2).all(|w| w[0].test_id < w[1].test_id));
    }
}

#[test]
fn raw_mode_runs_on_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.set("mode", "raw").unwrap();
    let s = run(&c, &small_data()).unwrap().summary;
    assert_eq!(s.input_dim, 64);
    assert_eq!(s.theta, None);
    assert!(s.accuracy > 0.5);
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let data = small_data();
    let sa = cmd_run_with(&small_config(a.path()), &data).unwrap();
    let sb = cmd_run_with(&small_config(b.path()), &data).unwrap();
    assert_eq!(sa, sb);
    for f in ["results.csv", "summary.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# schema: results v1"));
    assert!(lines.next().unwrap().starts_with("test_id,true_label,predicted,reject,f_hat_0"));
    assert_eq!(lines.count(), 150);
    let saved = ExperimentConfig::load(a.path().join("config.txt")).unwrap();
    assert_eq!(saved, small_config(a.path()));
}

#[test]
fn idx_files_on_disk_drive_a_run() {
    let data_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut c = small_config(out.path());
    c.data_dir = Some(data_dir.path().to_path_buf());
    write_idx(data_dir.path(), &c);
    let first = cmd_run(&c).unwrap();
    let bytes = fs::read(out.path().join("results.csv")).unwrap();
    assert_eq!(cmd_run(&c).unwrap(), first);
    assert_eq!(fs::read(out.path().join("results.csv")).unwrap(), bytes);

    let mut missing = c.clone();
    missing.test_labels = "nope".into();
    assert!(cmd_run(&missing).is_err());
}

#[test]
fn cached_runs_match_fresh_ones() {
    let out = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let data = small_data();
    let plain = run(&small_config(out.path()), &data).unwrap();
    let mut c = small_config(out.path());
    c.cache = true;
    c.cache_dir = cache.path().to_path_buf();
    let cold = run(&c, &data).unwrap();
    assert!(fs::read_dir(cache.path()).unwrap().count() >= 2);
    let warm = run(&c, &data).unwrap();
    assert_eq!(results_csv(&cold.records), results_csv(&plain.records));
    assert_eq!(results_csv(&warm.records), results_csv(&plain.records));
}

#[test]
fn profile_writes_its_tables() {
    let out = tempfile::tempdir().unwrap();
    let c = small_config(out.path());
    let r = cmd_profile_with(&c, &small_data()).unwrap();
    assert!(r.x.kappa >= 1.0 && r.xdot.kappa >= 1.0);
    assert!(r.ratio.mean > 0.0 && r.ratio.mean <= 1.0);
    assert!(r.cost.classifier_cost > r.cost.qsfa_cost);
    for (f, schema) in [("profile.csv", "# schema: profile v1"), ("cost.csv", "# schema: cost v1")] {
        let text = fs::read_to_string(out.path().join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(schema));
    }
    assert!(out.path().join("profile_summary.txt").exists());
}

#[test]
fn empty_grid_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let c = small_config(out.path());
    assert!(sweep(&c, &small_data(), SweepTarget::Run, SweepAxis::N, &[]).is_err());
    assert!(cmd_sweep(&c, SweepTarget::Profile, SweepAxis::D, &[]).is_err());
    assert!(parse_grid("").is_err());
    assert_eq!(parse_grid("10, 20,30").unwrap(), vec![10, 20, 30]);
}

#[test]
fn single_point_sweep_equals_a_run() {
    let out = tempfile::tempdir().unwrap();
    let data = small_data();
    let mut c = small_config(out.path());
    let res = sweep(&c, &data, SweepTarget::Run, SweepAxis::D, &[10]).unwrap();
    let SweepResult::Run(s) = &res[0].1 else {
        panic!("sweep point failed: {:?}", res[0].1);
    };
    c.output_dir = out.path().join("direct");
    let direct = cmd_run_with(&c, &data).unwrap();
    assert_eq!(*s, direct);
    assert_eq!(
        fs::read(out.path().join("d-10").join("results.csv")).unwrap(),
        fs::read(out.path().join("direct").join("results.csv")).unwrap()
    );
}

#[test]
fn failed_points_are_recorded() {
    let data_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut c = small_config(out.path());
    c.data_dir = Some(data_dir.path().to_path_buf());
    c.set("mode", "oracle").unwrap();
    write_idx(data_dir.path(), &c);
    let res = cmd_sweep(&c, SweepTarget::Run, SweepAxis::D, &[6, 500]).unwrap();
    assert!(matches!(res[0].1, SweepResult::Run(_)));
    assert!(matches!(res[1].1, SweepResult::Failed(_)));
    let failures = fs::read_to_string(out.path().join("failures.csv")).unwrap();
    let rows: Vec<&str> = failures.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("d,500,"));
    let merged = fs::read_to_string(out.path().join("results_merged.csv")).unwrap();
    let mut lines = merged.lines().skip(1);
    assert_eq!(lines.next(), Some(MERGED_RUN_HEADER));
    assert!(lines.next().unwrap().starts_with("d,6,oracle,6,2,27,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn profile_sweep_merges_points() {
    let data_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut c = small_config(out.path());
    c.data_dir = Some(data_dir.path().to_path_buf());
    write_idx(data_dir.path(), &c);
    cmd_sweep(&c, SweepTarget::Profile, SweepAxis::N, &[300, 600]).unwrap();
    let cost = fs::read_to_string(out.path().join("cost.csv")).unwrap();
    assert_eq!(cost.lines().count(), 4);
    let profile = fs::read_to_string(out.path().join("profile.csv")).unwrap();
    assert!(profile.lines().nth(1).unwrap().starts_with("axis,axis_value,matrix_tag"));
}

#[test]
fn table_rows_and_centroid_baseline() {
    assert_eq!(parse_table_rows("40x2,36x3").unwrap(), vec![(40, 2), (36, 3)]);
    assert!(parse_table_rows("40").is_err());
    let d = small_data();
    let acc = nearest_centroid_accuracy(d.train.images.as_ref(), &d.train.labels, d.test.images.as_ref(), &d.test.labels, 10)
        .unwrap();
    assert!(acc > 0.9);
}
