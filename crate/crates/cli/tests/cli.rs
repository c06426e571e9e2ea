use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use misalign_core::harness::dataset::DatasetManifest;
use misalign_core::harness::pipeline::parse_predictions_csv;
use misalign_core::metrics::xi_rates;

fn misalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misalign")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = misalign(args);
    assert!(out.status.success(), "misalign {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Tiny pipeline up to a trained model; returns the dataset directory.
fn pipeline(dir: &Path, scheme: &str, seed: &str) -> PathBuf {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# small run\nfps_count = 24\nmax_sinkhorn_atoms = 12\nepochs = 10\ninits_per_pair = 2\n").unwrap();
    let cfg = s(&cfg);
    let scenes = s(&dir.join("scenes.json"));
    let data = dir.join(scheme);
    let common = ["--seed", seed, "--config", cfg.as_str()];
    let run = |args: &[&str]| ok(&[args, &common[..]].concat());
    run(&["gen-scenes", "--count", "2", "--poses", "2", "--out", &scenes]);
    run(&["build-dataset", "--scenes", &scenes, "--scheme", scheme, "--out", &s(&data)]);
    run(&["featurize", "--manifest", &s(&data.join("manifest.json")), "--out", &s(&data.join("features"))]);
    run(&[
        "train",
        "--manifest",
        &s(&data.join("manifest.json")),
        "--features",
        &s(&data.join("features")),
        "--out",
        &s(&data.join("model.mmdl")),
        "--history",
        &s(&data.join("history.csv")),
    ]);
    data
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = misalign(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = misalign(&["featurize", "--manifest", &s(&dir.path().join("absent.json")), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "fps_count 12\n").unwrap();
    let out = misalign(&["--config", &s(&cfg), "gen-scenes", "--out", &s(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_class_pair_is_a_usage_error() {
    let out = misalign(&["binary-eval", "--manifest", "m.json", "--predictions", "p.csv", "--classes", "3,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_twice_with_one_seed_writes_identical_models() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = pipeline(a.path(), "synthetic10", "1");
    let db = pipeline(b.path(), "synthetic10", "1");
    for f in ["manifest.json", "model.mmdl", "history.csv"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn end_to_end_reports_agree_with_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = pipeline(dir.path(), "epsilon5", "2");
    let manifest = s(&data.join("manifest.json"));
    let features = s(&data.join("features"));
    let model = s(&data.join("model.mmdl"));
    let eval_dir = data.join("eval");
    ok(&["eval", "--manifest", &manifest, "--model", &model, "--features", &features, "--split", "train", "--out-dir", &s(&eval_dir)]);
    for f in ["report.json", "confusion.csv", "xi.csv", "predictions.csv"] {
        assert!(eval_dir.join(f).is_file(), "{f}");
    }

    // Re-evaluating from the written predictions reproduces the xi rates.
    let preds_path = s(&eval_dir.join("predictions.csv"));
    let again = data.join("again");
    ok(&["eval", "--manifest", &manifest, "--predictions", &preds_path, "--split", "train", "--out-dir", &s(&again)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(again.join("report.json")).unwrap()).unwrap();
    let rows = parse_predictions_csv(&std::fs::read_to_string(&preds_path).unwrap()).unwrap();
    let m = DatasetManifest::load(Path::new(&manifest)).unwrap();
    let labels: Vec<usize> = rows.iter().map(|(id, _)| m.entries.iter().find(|e| &e.id == id).unwrap().label).collect();
    let predicted: Vec<usize> = rows.iter().map(|(_, p)| *p).collect();
    let xi = xi_rates(&predicted, &labels, 5).unwrap();
    let reported: Vec<f64> = report["xi"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(reported, xi);

    let corr = ok(&["correct-map", "--manifest", &manifest, "--predictions", &preds_path, "--split", "train", "--threshold", "3"]);
    let corr: serde_json::Value = serde_json::from_str(&corr).unwrap();
    assert!(corr["mean_epsilon_after"].as_f64().unwrap() <= corr["mean_epsilon_before"].as_f64().unwrap() + 1e-12);

    let study = data.join("study");
    ok(&["metric-study", "--manifest", &manifest, "--split", "train", "--model", &model, "--features", &features, "--out", &s(&study)]);
    for ext in ["csv", "svg", "json"] {
        assert!(study.with_extension(ext).is_file(), "{ext}");
    }

    let id = m.entries[0].id.clone();
    let vis = data.join("vis");
    ok(&["visibility", "--manifest", &manifest, "--id", &id, "--out", &s(&vis)]);
    assert!(data.join("vis_cloud0.ply").is_file() && data.join("vis_cloud1.ply").is_file());
}

#[test]
fn binary_and_coral_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = pipeline(dir.path(), "synthetic10", "4");
    let manifest = s(&data.join("manifest.json"));
    let out = ok(&[
        "binary-eval",
        "--manifest",
        &manifest,
        "--model",
        &s(&data.join("model.mmdl")),
        "--features",
        &s(&data.join("features")),
        "--split",
        "train",
        "--classes",
        "0,3",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let coral_path = data.join("coral.json");
    ok(&["--config", &s(&dir.path().join("run.cfg")), "coral-baseline", "--manifest", &manifest, "--classes", "0,1", "--out", &s(&coral_path)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(coral_path).unwrap()).unwrap();
    assert!(v["accuracy"].as_f64().is_some());
}
