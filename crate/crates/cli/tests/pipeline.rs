use std::fs;
use std::path::Path;

use stopdetect_cli::main_with_args;
use stopdetect_cli::manifest::{read, MANIFEST_FILE};

const SMALL: &str = "\
seed = 9
generator.n_devices = 10
generator.window_days = 14
generator.mean_daily_pings = 220
filter.min_daily_pings = 150
forest.n_trees = 20
ffnn.epochs = 3
eval.tn_sample = 2000
eval.importance_max_rows = 1000
";

const ARTIFACTS: [&str; 26] = [
    "pings.csv",
    "ground_truth_stops.csv",
    "quality.csv",
    "stops.csv",
    "labeled_pings.csv",
    "gap_plan.csv",
    "positives_manifest.csv",
    "gapped_pings.csv",
    "features.csv",
    "entropy.csv",
    "split.csv",
    "scaler.csv",
    "model_forest.json",
    "model_ffnn.json",
    "predictions_forest.csv",
    "predictions_ffnn.csv",
    "roc_forest.csv",
    "roc_ffnn.csv",
    "report.json",
    "correlation.csv",
    "importance.csv",
    "fp_distance_quantiles.csv",
    "daily_counts.csv",
    "hourly_stops.csv",
    "config.resolved",
    MANIFEST_FILE,
];

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("stopdetect").chain(args.iter().copied()))
}

fn strip_out(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    text.lines().filter(|l| !l.starts_with("paths.out")).collect::<Vec<_>>().join("\n").into_bytes()
}

fn same_artifacts(a: &Path, b: &Path) {
    for f in ARTIFACTS.iter().filter(|f| **f != MANIFEST_FILE) {
        let mut x = fs::read(a.join(f)).unwrap();
        let mut y = fs::read(b.join(f)).unwrap();
        if *f == "config.resolved" {
            // echoes the --out directory, which differs between the runs
            x = strip_out(&x);
            y = strip_out(&y);
        }
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn pipeline_emits_every_artifact_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["pipeline", "--config", &conf, "--out", a.to_str().unwrap()]), 0);
    for f in ARTIFACTS {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let entries = read(&a).unwrap();
    assert_eq!(entries.len(), 7);
    assert!(entries.iter().all(|e| e.status == "ok"));

    assert_eq!(run(&["pipeline", "--config", &conf, "--out", b.to_str().unwrap()]), 0);
    same_artifacts(&a, &b);
    let hashes = |d: &Path| read(d).unwrap().into_iter().map(|e| (e.stage, e.seed, e.inputs, e.outputs)).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));

    // a second pipeline run into the same directory starts a fresh manifest
    assert_eq!(run(&["pipeline", "--config", &conf, "--out", a.to_str().unwrap()]), 0);
    assert_eq!(read(&a).unwrap().len(), 7);
}

#[test]
fn stages_run_one_by_one_match_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let whole = dir.path().join("whole");
    let steps = dir.path().join("steps");
    assert_eq!(run(&["pipeline", "--config", &conf, "--out", whole.to_str().unwrap()]), 0);
    for stage in ["generate", "label", "inject-gaps", "features", "split", "train", "evaluate"] {
        assert_eq!(run(&[stage, "--config", &conf, "--out", steps.to_str().unwrap()]), 0, "stage {stage}");
    }
    same_artifacts(&whole, &steps);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["generate", "--config", &conf, "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run(&["generate", "--config", &conf, "--seed", "10", "--out", b.to_str().unwrap()]), 0);
    assert_ne!(fs::read(a.join("pings.csv")).unwrap(), fs::read(b.join("pings.csv")).unwrap());
    let resolved = fs::read_to_string(b.join("config.resolved")).unwrap();
    assert!(resolved.lines().any(|l| l == "seed = 10"), "{resolved}");
}

#[test]
fn train_without_features_fails_with_stage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert_eq!(run(&["train", "--config", &conf, "--out", out.to_str().unwrap()]), 2);
    let entries = read(&out).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].status, "failed");
    assert!(entries[0].error.as_deref().unwrap().contains("features.csv"), "{:?}", entries[0].error);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "forest.n_tress = 10\nsplit.train = 0.9\n");
    let out = dir.path().join("out");
    assert_eq!(run(&["pipeline", "--config", &bad, "--out", out.to_str().unwrap()]), 1);
    assert!(!out.join(MANIFEST_FILE).exists());
    assert_eq!(run(&["check-config", "--config", &bad]), 1);
    assert_eq!(run(&["check-config", "--config", "/nonexistent/run.conf"]), 1);
    let good = write_config(dir.path(), SMALL);
    assert_eq!(run(&["check-config", "--config", &good]), 0);
}
