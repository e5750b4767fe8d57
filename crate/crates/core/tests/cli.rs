//! End-to-end behaviour of the `mofq` binary.

use std::path::Path;
use std::process::{Command, Output};

fn mofq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mofq")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mofq(dir, args);
    assert!(out.status.success(), "mofq {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Generates a small model and calibrates it under `dir`.
fn prepare(dir: &Path, extra: &[&str]) {
    let mut gen = vec!["gen", "--out", "data", "--seed", "5", "--layers", "3", "--width", "16", "--batch", "8"];
    gen.extend_from_slice(extra);
    ok(dir, &gen);
    ok(dir, &["calibrate", "--model", "data/model", "--inputs", "data/calib_inputs", "--out", "calib"]);
}

#[test]
fn unknown_format_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mofq(tmp.path(), &["formats", "fp9_e9m9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fp9_e9m9"));
    assert_eq!(mofq(tmp.path(), &["select", "--bits", "5"]).status.code(), Some(2));
}

#[test]
fn formats_all_lists_every_code() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["formats", "--all", "--out", "formats.csv"]);
    let csv = read(tmp.path(), "formats.csv");
    // 16 + 256 + 16 + 16 + 256 + 256 codes plus the header.
    assert_eq!(csv.lines().count(), 817);
    assert!(csv.contains("fp8_e4m3,127,01111111,NaN"));
    assert!(csv.contains("fp8_e4m3,126,01111110,448"));
    assert!(csv.contains("fp8_e5m2,124,01111100,Inf"));
    assert!(csv.contains("int4,8,1000,unused"));
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path(), "formats.json")).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 816);
}

#[test]
fn analyze_argmin_matches_select() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    ok(d, &["analyze", "--model", "data/model", "--calib", "calib", "--bits", "4", "--out", "analyze.csv"]);
    ok(d, &["select", "--model", "data/model", "--calib", "calib", "--bits", "4", "--out", "sel"]);
    let analyze = read(d, "analyze.csv");
    let select = read(d, "sel/report.csv");
    assert_eq!(analyze, select);
    let chosen: Vec<&str> = analyze.lines().skip(1).filter(|l| l.ends_with(",true")).collect();
    assert_eq!(chosen.len(), 3);
    let timing: serde_json::Value = serde_json::from_str(&read(d, "sel/timing.json")).unwrap();
    assert!(timing["wall_clock_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn all_zero_layer_has_zero_error_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &["--zero-layer", "1"]);
    ok(d, &["analyze", "--model", "data/model", "--calib", "calib", "--bits", "8", "--mode", "wa", "--out", "a.csv"]);
    let rows: Vec<String> = read(d, "a.csv").lines().filter(|l| l.starts_with("1,")).map(String::from).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.contains(",0e0,"), "{r}");
    }
    assert!(rows[0].starts_with("1,layer1,int8,int,0e0,true"));
}

#[test]
fn single_candidate_select_gives_extreme_fp_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    for (cand, frac) in [("int8", 0.0), ("fp8_e4m3", 1.0)] {
        let out = format!("sel_{cand}");
        ok(d, &["select", "--model", "data/model", "--calib", "calib", "--bits", "8", "--candidates", cand, "--out", &out]);
        let report: serde_json::Value = serde_json::from_str(&read(d, &format!("{out}/report.json"))).unwrap();
        assert_eq!(report["fp_fraction"].as_f64(), Some(frac));
    }
    let bad = mofq(d, &["select", "--model", "data/model", "--bits", "4", "--candidates", "int8", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_reports_baselines_and_zero_error_for_unquantized() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    ok(d, &["select", "--model", "data/model", "--calib", "calib", "--bits", "8", "--mode", "wa", "--out", "mofq8"]);
    // The reference itself, stored as a bundle with every layer unquantized.
    let model = mofq::tensorio::load_model(&d.join("data/model")).unwrap();
    let full = mofq::qmodel::QuantizedModel::from_configs(
        &model,
        &vec![mofq::simgraph::LayerQuantConfig::unquantized(); model.len()],
        true,
    )
    .unwrap();
    mofq::tensorio::save_bundle(&mofq::tensorio::Bundle::Quantized(full), &d.join("full")).unwrap();
    ok(d, &["eval", "--model", "data/model", "--inputs", "data/eval_inputs", "--quantized", "full", "--quantized", "m=mofq8/quantized", "--out", "eval.csv"]);
    let csv = read(d, "eval.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "label,mse,nsr,fp_fraction");
    assert!(lines[1].starts_with("full,0e0,0e0,"), "{}", lines[1]);
    assert!(lines[2].starts_with("m,"));
    let json: serde_json::Value = serde_json::from_str(&read(d, "eval.json")).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_eval_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    ok(d, &["select", "--model", "data/model", "--bits", "4", "--out", "sel"]);
    let out = mofq(d, &["eval", "--model", "data/model", "--inputs", "nowhere", "--quantized", "sel/quantized", "--out", "e.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn config_file_reproduces_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    ok(d, &["select", "--model", "data/model", "--calib", "calib", "--bits", "8", "--mode", "wa", "--metric", "layer", "--out", "a"]);
    // Replaying the recorded config into a different directory.
    ok(d, &["select", "--config", "a/run_config.json", "--out", "b"]);
    assert_eq!(read(d, "a/report.csv"), read(d, "b/report.csv"));
    assert_eq!(read(d, "a/report.json"), read(d, "b/report.json"));
}

#[test]
fn wa_select_without_calibration_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, &[]);
    let out = mofq(d, &["select", "--model", "data/model", "--bits", "8", "--mode", "wa", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    // A calibration bundle that lacks a layer fails inside the selector.
    let mut calib = mofq::tensorio::load_calib(&d.join("calib")).unwrap();
    calib.batches.remove("layer2");
    mofq::tensorio::save_bundle(&mofq::tensorio::Bundle::Calib(calib), &d.join("partial")).unwrap();
    let out = mofq(d, &["select", "--model", "data/model", "--calib", "partial", "--bits", "8", "--mode", "wa", "--metric", "layer", "--out", "s"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(d, "s/report.json")).unwrap();
    assert_eq!(report["complete"], false);
    assert_eq!(report["layers"].as_array().unwrap().len(), 2);
}
