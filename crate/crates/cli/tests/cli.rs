use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cmb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmb"))
        .current_dir(dir)
        .env_remove("CMB_JOBS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cmb(dir, args);
    assert!(
        out.status.success(),
        "cmb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_COHORT: &str = r#"
manifest = "out/manifest.jsonl"
output_dir = "out"

[phantom]
n_scans = 4
seed = 5

[phantom.cohort]
dim = 40
cmb_count = [1, 3]
diameter_mm = [5.0, 9.0]
border_margin_mm = 8.0

[segmenter.axial]
kind = "oracle"
[segmenter.sagittal]
kind = "oracle"
[segmenter.coronal]
kind = "oracle"
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn record(dir: &Path, out: &str, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(out).join("runs").join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn pipeline(dir: &Path, extra: &[&str]) {
    for command in ["phantom", "segment", "fuse", "detect"] {
        let mut args = vec![command, "-c", "run.toml"];
        args.extend_from_slice(extra);
        ok(dir, &args);
    }
}

#[test]
fn oracle_pipeline_scores_perfectly() {
    let dir = setup(SMALL_COHORT);
    pipeline(dir.path(), &[]);
    let table = ok(dir.path(), &["eval", "-c", "run.toml"]);
    let all: Vec<&str> = table
        .lines()
        .find(|l| l.starts_with("All"))
        .unwrap()
        .split_whitespace()
        .collect();
    assert_eq!(all[2], "0.00", "FP/scan in {table}");
    assert_eq!(all[3], "0.00", "FN/scan in {table}");
    assert_eq!(all[4], "1.00", "DSC in {table}");
    assert_eq!(all[5], "1.00", "sensitivity in {table}");
    let out = dir.path().join("out");
    for f in [
        "eval/metrics.txt",
        "eval/metrics.jsonl",
        "eval/per_scan.jsonl",
        "detections/summary.tsv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rec = record(dir.path(), "out", "eval");
    assert_eq!(rec["command"], "eval");
    assert_eq!(rec["config"]["fusion"]["tau"], 0.125);
    assert!(rec["outputs"]["eval/metrics.txt"].as_str().unwrap().len() == 64);
}

#[test]
fn empty_scan_gives_unit_dice_and_na_rates() {
    let dir = setup(&SMALL_COHORT.replace("n_scans = 4", "counts = [0]"));
    pipeline(dir.path(), &[]);
    let table = ok(dir.path(), &["eval", "-c", "run.toml"]);
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["PHANTOM", "0.00", "0.00", "0.00", "1.00", "NA", "NA"]);
}

#[test]
fn outputs_do_not_depend_on_worker_count_or_rerun() {
    let dir = setup(SMALL_COHORT);
    pipeline(
        dir.path(),
        &["--jobs", "1", "-o", "a", "--manifest", "a/manifest.jsonl"],
    );
    pipeline(
        dir.path(),
        &["--jobs", "4", "-o", "b", "--manifest", "b/manifest.jsonl"],
    );
    for command in ["phantom", "segment", "fuse", "detect"] {
        let (a, b) = (record(dir.path(), "a", command), record(dir.path(), "b", command));
        assert_eq!(a["outputs"], b["outputs"], "{command} outputs differ");
        assert!(!a["outputs"].as_object().unwrap().is_empty());
    }
    let first = record(dir.path(), "a", "fuse");
    ok(
        dir.path(),
        &[
            "fuse",
            "-c",
            "run.toml",
            "-o",
            "a",
            "--manifest",
            "a/manifest.jsonl",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(first["outputs"], record(dir.path(), "a", "fuse")["outputs"]);
}

#[test]
fn replay_reproduces_and_flags_divergence() {
    let dir = setup(SMALL_COHORT);
    ok(dir.path(), &["phantom", "-c", "run.toml"]);
    let rec_path = dir.path().join("out/runs/phantom.json");
    let stdout = ok(dir.path(), &["replay", rec_path.to_str().unwrap()]);
    assert!(stdout.contains("reproduced"), "{stdout}");

    let mut rec: Value = serde_json::from_str(&std::fs::read_to_string(&rec_path).unwrap()).unwrap();
    rec["outputs"]["manifest.jsonl"] = Value::String("0".repeat(64));
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_string(&rec).unwrap()).unwrap();
    let out = cmb(dir.path(), &["replay", tampered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_separate_usage_data_and_success() {
    let dir = setup(SMALL_COHORT);
    assert_eq!(cmb(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(cmb(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(cmb(dir.path(), &["eval", "--jobs", "x"]).status.code(), Some(1));
    assert_eq!(
        cmb(dir.path(), &["eval", "-c", "run.toml", "--tau", "2"]).status.code(),
        Some(1)
    );
    assert_eq!(
        cmb(dir.path(), &["eval", "--set", "fusion.nope=1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        cmb(dir.path(), &["eval"]).status.code(),
        Some(1),
        "no manifest configured"
    );
    assert_eq!(
        cmb(dir.path(), &["eval", "-c", "run.toml"]).status.code(),
        Some(2),
        "manifest missing"
    );
    assert_eq!(cmb(dir.path(), &["eval", "-c", "missing.toml"]).status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_cmb"))
        .current_dir(dir.path())
        .env("CMB_JOBS", "zero")
        .args(["show-config"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn show_config_reflects_overrides() {
    let dir = setup(SMALL_COHORT);
    let text = ok(
        dir.path(),
        &[
            "show-config",
            "-c",
            "run.toml",
            "--min-volume",
            "3.5",
            "--set",
            "detect.connectivity=\"6\"",
            "--seed",
            "11",
        ],
    );
    let cfg: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(cfg["detect"]["min_volume_mm3"].as_float(), Some(3.5));
    assert_eq!(cfg["stats"]["size_filter_mm3"].as_float(), Some(3.5));
    assert_eq!(cfg["detect"]["connectivity"].as_str(), Some("6"));
    assert_eq!(cfg["phantom"]["seed"].as_integer(), Some(11));
    assert_eq!(cfg["segmenter"]["axial"]["seed"].as_integer(), Some(11));
}

#[test]
fn group_comparison_and_sweep_follow_planted_counts() {
    let high = "6, 5, 7, 5, 2, 6, 5, 3";
    let low = "0, 1, 0, 0, 1, 0, 0, 1";
    let config = SMALL_COHORT
        .replace(
            "n_scans = 4",
            &format!(
                "counts = [{high}, {low}]\np_cmb = [{}{}]",
                "0.9, ".repeat(8),
                "0.001, ".repeat(8)
            ),
        )
        .replace("dim = 40", "dim = 56")
        .replace("diameter_mm = [5.0, 9.0]", "diameter_mm = [5.0, 7.0]");
    let dir = setup(&config);
    pipeline(dir.path(), &[]);
    let summary = ok(dir.path(), &["compare-groups", "-c", "run.toml"]);
    assert!(summary.contains("Wilcoxon"), "{summary}");
    let cmp: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/stats/comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["mean_a"].as_f64(), Some(39.0 / 8.0));
    assert_eq!(cmp["mean_b"].as_f64(), Some(3.0 / 8.0));
    assert_eq!(cmp["pairing"]["group_a"].as_array().unwrap().len(), 8);
    assert_eq!(cmp["contingency"]["a"], 6);
    assert_eq!(cmp["wilcoxon"]["status"], "computed");
    // all eight differences positive
    assert_eq!(cmp["wilcoxon"]["p_value"].as_f64(), Some(2.0 / 256.0));

    let sweep = ok(dir.path(), &["sweep", "-c", "run.toml"]);
    let rows: Vec<Vec<f64>> = sweep
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 41);
    for w in rows.windows(2) {
        assert!(w[1][3] <= w[0][3] && w[1][4] <= w[0][4], "sweep not monotone: {sweep}");
    }
    assert!(dir.path().join("out/stats/sweep.jsonl").is_file());
}

#[test]
fn mask_synth_and_augment_write_their_artifacts() {
    let config = SMALL_COHORT.replace(
        "border_margin_mm = 8.0",
        "border_margin_mm = 8.0\n[phantom.cohort.background]\nbase = 0.7\nsmooth_amplitude = 0.0\nnoise_sigma = 0.0",
    );
    let dir = setup(&config);
    ok(dir.path(), &["phantom", "-c", "run.toml"]);
    ok(
        dir.path(),
        &["mask-synth", "-c", "run.toml", "-o", "synth", "--mask-dir", "out/masks"],
    );
    let out = dir.path().join("synth");
    assert_eq!(
        std::fs::read_to_string(out.join("mask-synth/issues.jsonl")).unwrap(),
        ""
    );
    for s in 0..4 {
        assert!(out.join(format!("masks/phantom-{s:03}.nii.gz")).is_file());
    }
    ok(dir.path(), &["augment", "-c", "run.toml", "--seed", "3"]);
    let aug = dir.path().join("out/augmented");
    let manifest = std::fs::read_to_string(aug.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    let params: Value =
        serde_json::from_str(&std::fs::read_to_string(aug.join("params/phantom-000.json")).unwrap()).unwrap();
    assert_eq!(params["master_seed"], 3);
    assert_eq!(params["scan_id"], "phantom-000");
}

#[test]
fn partition_splits_subjects() {
    let dir = setup(
        &SMALL_COHORT
            .replace("n_scans = 4", "n_scans = 10")
            .replace("dim = 40", "dim = 24"),
    );
    ok(
        dir.path(),
        &[
            "phantom",
            "-c",
            "run.toml",
            "--set",
            "phantom.cohort.border_margin_mm=5.0",
            "--set",
            "phantom.cohort.diameter_mm=[2.0, 3.0]",
        ],
    );
    ok(dir.path(), &["partition", "-c", "run.toml"]);
    let p: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/partition/partition.json")).unwrap())
            .unwrap();
    let sizes: Vec<usize> = ["train", "validation", "test"]
        .iter()
        .map(|k| p[k].as_array().unwrap().len())
        .collect();
    assert_eq!(sizes, [7, 1, 2]);
    let tsv = std::fs::read_to_string(dir.path().join("out/partition/scans.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 11);
}
