use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaplab_cli::commands::{self, HISTORY_FILE, SUMMARY_FILE};
use gaplab_cli::embfile::EmbFile;
use gaplab_core::geometry::{gap_report, EmbeddingBatch, Modality};
use gaplab_core::numerics::l2_normalize_rows;
use gaplab_core::trainkit::RunHistory;
use gaplab_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

fn gaplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaplab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn unit_rows(n: usize, d: usize, seed: u64, offset: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if k % d == 0 { offset } else { 0.0 }
        })
        .collect();
    l2_normalize_rows(&Matrix::new(n, d, data).unwrap(), 1e-12).matrix
}

fn write_pair(dir: &Path, n: usize, d: usize) -> (PathBuf, PathBuf, Matrix, Matrix) {
    let v = unit_rows(n, d, 1, 2.0);
    let t = unit_rows(n, d, 2, -1.0);
    let vi = dir.join("images.emb");
    let ti = dir.join("texts.emb");
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    EmbFile::from_matrix(&v, Some(&labels)).unwrap().write(&vi).unwrap();
    EmbFile::from_matrix(&t, Some(&labels)).unwrap().write(&ti).unwrap();
    (vi, ti, v, t)
}

const SMALL_CONFIG: &str = r#"{
  "synth": {"n_classes": 4, "samples_per_class": 20, "latent_dim": 6, "image_input_dim": 8, "text_input_dim": 7},
  "train": {"batch_size": 16, "hidden_dim": 12, "embed_dim": 6,
            "curriculum": {"anchor_epochs": 1, "ramp_epochs": 2, "stabilize_epochs": 1, "alpha_target": 0.4}}
}"#;

fn small_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(SMALL_CONFIG).unwrap();
    edit(&mut v);
    let path = dir.join(format!("config-{}.json", rand::rng().random::<u32>()));
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn embfile_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(1..9);
        let values: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
        let labels = (trial % 2 == 0).then(|| (0..n).map(|_| rng.random::<u32>()).collect());
        let f = EmbFile { n, d, values, labels };
        let path = dir.path().join("x.emb");
        f.write(&path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        let expected = 12 + 4 * n * d + f.labels.as_ref().map_or(0, |_| 4 + 4 * n);
        assert_eq!(size, expected);
        assert_eq!(EmbFile::read(&path).unwrap(), f);
    }
}

#[test]
fn analyze_identical_files_has_no_gap() {
    let dir = TempDir::new().unwrap();
    let (vi, _, _, _) = write_pair(dir.path(), 30, 5);
    let out = dir.path().join("r.json");
    let o = gaplab(&["analyze", "--images", p(&vi), "--texts", p(&vi), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    for key in ["raw_gap", "centroid_gap", "distribution_gap"] {
        // Rows are unit-norm only to 32-bit precision after the round trip.
        assert!(r[key].as_f64().unwrap().abs() < 1e-6, "{key}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("distribution_gap="));
}

#[test]
fn analyze_matches_in_memory_report() {
    let dir = TempDir::new().unwrap();
    let (vi, ti, v, t) = write_pair(dir.path(), 50, 6);
    let mut sink = Vec::new();
    let disk = commands::analyze(&vi, &ti, None, &mut sink).unwrap();
    let mem = gap_report(
        &EmbeddingBatch::new(v, None, Modality::Image).unwrap(),
        &EmbeddingBatch::new(t, None, Modality::Text).unwrap(),
    )
    .unwrap();
    for (a, b) in [
        (disk.raw_gap, mem.raw_gap),
        (disk.centroid_gap, mem.centroid_gap),
        (disk.distribution_gap, mem.distribution_gap),
        (disk.fusion_index, mem.fusion_index),
    ] {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn bad_inputs_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let (vi, _, _, _) = write_pair(dir.path(), 10, 4);
    let junk = dir.path().join("junk.emb");
    std::fs::write(&junk, b"NOPE00000000").unwrap();
    let o = gaplab(&["analyze", "--images", p(&vi), "--texts", p(&junk)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.emb"));

    let other = dir.path().join("other.emb");
    EmbFile::from_matrix(&unit_rows(10, 3, 9, 0.0), None).unwrap().write(&other).unwrap();
    let o = gaplab(&["analyze", "--images", p(&vi), "--texts", p(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape mismatch"));

    let missing = dir.path().join("missing.emb");
    let o = gaplab(&["plot", "--images", p(&missing), "--texts", p(&vi), "--out", "x.svg"]);
    assert_eq!(o.status.code(), Some(2));

    let o = gaplab(&["sweep", "--alphas", "0.2,1.5", "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn center_removes_centroid_gap() {
    let dir = TempDir::new().unwrap();
    let (vi, ti, _, _) = write_pair(dir.path(), 40, 5);
    let (vo, to) = (dir.path().join("vc.emb"), dir.path().join("tc.emb"));
    let mut sink = Vec::new();
    let r = commands::center(&vi, &ti, &vo, &to, false, &mut sink).unwrap();
    assert!((r.after.distribution_gap - r.before.distribution_gap).abs() < 1e-5);
    let again = commands::analyze(&vo, &to, None, &mut sink).unwrap();
    assert!(again.centroid_gap < 1e-6);
    assert!((again.distribution_gap - r.before.distribution_gap).abs() < 1e-5);

    // A second pass is a no-op.
    let (vo2, to2) = (dir.path().join("vc2.emb"), dir.path().join("tc2.emb"));
    commands::center(&vo, &to, &vo2, &to2, false, &mut sink).unwrap();
    let a = EmbFile::read(&vo).unwrap().to_matrix().unwrap();
    let b = EmbFile::read(&vo2).unwrap().to_matrix().unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
    assert_eq!(EmbFile::read(&vo2).unwrap().labels, EmbFile::read(&vi).unwrap().labels);

    commands::center(&vi, &ti, &vo, &to, true, &mut sink).unwrap();
    let m = EmbFile::read(&vo).unwrap().to_matrix().unwrap();
    for row in m.iter_rows() {
        let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gaplab(&["train", "--config", p(&cfg), "--out-dir", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        HISTORY_FILE,
        SUMMARY_FILE,
        "image_encoder.enc",
        "text_encoder.enc",
        "eval_images.emb",
        "eval_texts.emb",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let hist = RunHistory::from_jsonl(&std::fs::read_to_string(a.join(HISTORY_FILE)).unwrap()).unwrap();
    assert_eq!(hist.records.len(), 4);
    let eval = EmbFile::read(&a.join("eval_images.emb")).unwrap();
    assert_eq!(eval.n, 16);
    assert!(eval.labels.is_some());
    let enc = gaplab_cli::checkpoint::read(&a.join("image_encoder.enc")).unwrap();
    assert_eq!((enc.input_dim(), enc.hidden_dim(), enc.output_dim()), (8, 12, 6));
}

#[test]
fn default_config_trains_for_ten_epochs() {
    let dir = TempDir::new().unwrap();
    let mut sink = Vec::new();
    let s = commands::train_cmd(None, dir.path(), &mut sink).unwrap();
    assert_eq!(s.epochs, 10);
    let text = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn zero_target_keeps_alpha_at_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |v| v["train"]["curriculum"]["alpha_target"] = 0.0.into());
    let mut sink = Vec::new();
    commands::train_cmd(Some(&cfg), &dir.path().join("o"), &mut sink).unwrap();
    let hist = RunHistory::from_jsonl(&std::fs::read_to_string(dir.path().join("o").join(HISTORY_FILE)).unwrap()).unwrap();
    assert!(hist.records.iter().all(|r| r.alpha == 0.0));
}

#[test]
fn config_errors_and_divergence_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let bad = small_config(dir.path(), |v| v["train"]["learning_rat"] = 0.1.into());
    let o = gaplab(&["train", "--config", p(&bad), "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let diverge = small_config(dir.path(), |v| v["train"]["learning_rate"] = f64::MAX.into());
    let o = gaplab(&["train", "--config", p(&diverge), "--out-dir", p(&dir.path().join("y"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn sweep_single_alpha_reproduces_train() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |v| v["train"]["curriculum"]["alpha_target"] = 0.0.into());
    let mut sink = Vec::new();
    let summary = commands::train_cmd(Some(&cfg), &dir.path().join("t"), &mut sink).unwrap();
    let out = dir.path().join("s.csv");
    let o = gaplab(&["sweep", "--config", p(&cfg), "--alphas", "0", "--seeds", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (headers, cols) = commands::read_columns(&out).unwrap();
    assert_eq!(headers, gaplab_core::evalkit::SweepRecord::COLUMNS);
    let row: Vec<f64> = cols.iter().map(|c| c[0]).collect();
    assert_eq!(row, summary.metrics.values().to_vec());
    assert!(dir.path().join("s.runs.csv").exists());
}

#[test]
fn sweep_rows_follow_alpha_order() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(gaplab(&["sweep", "--config", p(&cfg), "--alphas", "0,0.3,0.6", "--seeds", "0,1", "--out", p(&a)]).status.success());
    assert!(gaplab(&["sweep", "--config", p(&cfg), "--alphas", "0.6,0,0.3", "--seeds", "0,1", "--out", p(&b)]).status.success());
    let (_, ca) = commands::read_columns(&a).unwrap();
    let (_, cb) = commands::read_columns(&b).unwrap();
    let row = |cols: &Vec<Vec<f64>>, i: usize| cols.iter().map(|c| c[i]).collect::<Vec<_>>();
    assert_eq!(row(&ca, 0), row(&cb, 1));
    assert_eq!(row(&ca, 1), row(&cb, 2));
    assert_eq!(row(&ca, 2), row(&cb, 0));
    let (h, runs) = commands::read_columns(&dir.path().join("a.runs.csv")).unwrap();
    assert_eq!(h[0], "seed");
    assert_eq!(runs[0].len(), 6);
}

#[test]
fn failed_sweep_keeps_partial_table_with_marker() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |v| v["train"]["learning_rate"] = f64::MAX.into());
    let out = dir.path().join("s.csv");
    let o = gaplab(&["sweep", "--config", p(&cfg), "--alphas", "0,0.5", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("alpha_target,"));
    assert!(text.lines().last().unwrap().starts_with("# sweep aborted"));
    let runs = std::fs::read_to_string(dir.path().join("s.runs.csv")).unwrap();
    assert!(runs.lines().last().unwrap().starts_with("# sweep aborted"));
}

#[test]
fn correlate_fits_columns() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    std::fs::write(
        &csv,
        "alpha_target,raw_gap,distribution_gap,probe_accuracy\n0,0.4,0.5,0.0\n0.1,0.3,0.4,0.2\n0.2,0.1,0.3,0.4\n0.3,0.1,0.2,0.6\n",
    )
    .unwrap();
    let out = dir.path().join("fit.json");
    let o = gaplab(&["correlate", "--sweep", p(&csv), "--x", "distribution_gap", "--y", "probe_accuracy", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!((r["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((r["slope"].as_f64().unwrap() + 2.0).abs() < 1e-12);
    assert_eq!(r["r_squared_distribution_gap"], r["r_squared"]);
    assert!(r["r_squared_raw_gap"].as_f64().unwrap() < 1.0);

    let o = gaplab(&["correlate", "--sweep", p(&csv), "--x", "nope", "--y", "probe_accuracy"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&csv, "a,b\n1,1\n1,2\n1,3\n").unwrap();
    let o = gaplab(&["correlate", "--sweep", p(&csv), "--x", "a", "--y", "b"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("constant"));
}

#[test]
fn plot_is_well_formed_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let (vi, ti, _, _) = write_pair(dir.path(), 25, 5);
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    assert!(gaplab(&["plot", "--images", p(&vi), "--texts", p(&ti), "--out", p(&a)]).status.success());
    assert!(gaplab(&["plot", "--images", p(&vi), "--texts", p(&ti), "--out", p(&b)]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.as_bytes(), std::fs::read(&b).unwrap().as_slice());
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let markers = doc
        .descendants()
        .filter(|n| matches!(n.tag_name().name(), "circle" | "rect"))
        .count();
    assert_eq!(markers, 50);
    assert!(text.contains("distribution gap"));
}
