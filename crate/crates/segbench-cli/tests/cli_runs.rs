//! End-to-end checks of the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segbench::datagen::load_pgm;

const BIN: &str = env!("CARGO_BIN_EXE_segbench");

fn segbench(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_RUN: &str = r#"{"seed": 3, "dataset": {"count": 6, "extent": 16, "snr": 6.0},
    "model": {"features": 4, "depth": 1},
    "train": {"epochs": 2, "lr": 0.005, "batch": 2}, "folds": 3}"#;

#[test]
fn run_writes_a_complete_result_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let out_dir = dir.path().join("results");

    let out = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("pooled: auc"));

    for name in [
        "config_echo.json",
        "metrics.csv",
        "losses.csv",
        "roc.csv",
        "roc_folds.csv",
        "summary.md",
        "loss_curves.svg",
        "roc.svg",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    assert!(
        !out_dir.with_file_name("results.partial").exists(),
        "staging dir left behind"
    );

    // The prediction images parse back as PGM and stay in range.
    let samples: Vec<_> = fs::read_dir(out_dir.join("samples"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(samples.iter().any(|p| p
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("pred_")));
    for p in &samples {
        let t = load_pgm(p).unwrap();
        assert_eq!(t.shape, vec![1, 16, 16]);
    }

    // Refuses to overwrite without --force, replaces with it.
    let again = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!again.status.success());
    assert!(
        stderr(&again).contains("already exists"),
        "{}",
        stderr(&again)
    );
    let forced = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--force",
    ]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn report_rebuilds_the_same_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let out_dir = dir.path().join("results");
    let out = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let original = fs::read_to_string(out_dir.join("summary.md")).unwrap();
    fs::remove_file(out_dir.join("summary.md")).unwrap();
    let report = segbench(&["report", "--dir", out_dir.to_str().unwrap()]);
    assert!(report.status.success(), "{}", stderr(&report));
    let rebuilt = fs::read_to_string(out_dir.join("summary.md")).unwrap();
    assert_eq!(original, rebuilt);
    assert_eq!(stdout(&report), original);
}

#[test]
fn sweep_writes_per_level_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"seed": 3, "dataset": {"count": 6, "extent": 16},
            "model": {"features": 4, "depth": 1},
            "train": {"epochs": 2, "lr": 0.005, "batch": 2}, "folds": 3,
            "snrs": [2.0, 10.0]}"#,
    );
    let out_dir = dir.path().join("sweep");
    let out = segbench(&[
        "sweep",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let data_rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(data_rows.len(), 2);
    assert!(data_rows[0].starts_with("2,"));
    assert!(data_rows[1].starts_with("10,"));
    assert!(out_dir.join("auc_vs_snr.svg").exists());
    assert!(out_dir.join("summary.md").exists());

    // Sweep summary regenerates through the report verb too.
    let report = segbench(&["report", "--dir", out_dir.to_str().unwrap()]);
    assert!(report.status.success(), "{}", stderr(&report));
    assert!(stdout(&report).contains("sweep summary"));
}

#[test]
fn sweep_requires_snr_levels() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let out = segbench(&[
        "sweep",
        "--config",
        &config,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("snrs"), "{}", stderr(&out));
}

#[test]
fn config_errors_carry_json_pointers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"train": {"epochz": 3}}"#);
    let out = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("/train/epochz"), "{err}");
}

#[test]
fn gen_writes_loadable_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = segbench(&[
        "gen",
        "--kind",
        "cells",
        "--count",
        "3",
        "--extent",
        "24",
        "--snr",
        "5",
        "--seed",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    for i in 0..3 {
        let image = load_pgm(&out_dir.join(format!("image_{i:03}.pgm"))).unwrap();
        let mask = load_pgm(&out_dir.join(format!("mask_{i:03}.pgm"))).unwrap();
        assert_eq!(image.shape, vec![1, 24, 24]);
        assert!(mask.data.iter().all(|v| *v == 0.0 || *v == 1.0));
    }
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"cells\""));
    assert!(manifest.contains("\"seed\": 2"));

    let bad = segbench(&["gen", "--kind", "nebula", "--out", "x"]);
    assert!(!bad.status.success());
    assert!(
        stderr(&bad).contains("airy, cells, vessels"),
        "{}",
        stderr(&bad)
    );
}

#[test]
fn gradcheck_verb_reports_all_entries() {
    let out = segbench(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("gradient check: 32/32 entries"), "{text}");
    assert_eq!(text.matches(" PASS").count(), 32, "{text}");
    for name in ["conv2d", "ssm_scan", "bce", "cnn", "unet", "vit", "vssm"] {
        assert!(text.contains(name), "missing {name} in: {text}");
    }
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let a = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_a.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    let b = segbench(&[
        "run",
        "--config",
        &config,
        "--out",
        out_b.to_str().unwrap(),
        "--threads",
        "3",
    ]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(
        fs::read_to_string(out_a.join("roc.csv")).unwrap(),
        fs::read_to_string(out_b.join("roc.csv")).unwrap()
    );
    assert_eq!(stdout(&a).lines().last(), stdout(&b).lines().last());
}
