use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{dmatrix, DMatrix};
use posnet::model::{FiniteMatrixDistribution, NetworkModel};
use posnet::montecarlo::brute_force_prob;
use posnet::sis::{sis_design_family, NonPrevention, SisParams};
use serde_json::Value;
use tempfile::TempDir;

fn posnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posnet")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_model(dir: &TempDir, name: &str, model: &NetworkModel) -> PathBuf {
    let path = dir.path().join(name);
    model.save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn diagonal_model(entries: &[f64]) -> NetworkModel {
    let blocks: Vec<_> = entries
        .iter()
        .enumerate()
        .map(|(i, &d)| ((i, i), FiniteMatrixDistribution::deterministic(dmatrix![d])))
        .collect();
    NetworkModel::a1(entries.len(), 1, blocks).unwrap()
}

/// Three-node directed ring with a Bernoulli rate on each edge.
fn ring() -> NetworkModel {
    let mut blocks = Vec::new();
    for i in 0..3 {
        blocks.push(((i, i), FiniteMatrixDistribution::deterministic(dmatrix![-1.0])));
        let d = FiniteMatrixDistribution::two_point(0.4 + 0.1 * i as f64, dmatrix![1.6], dmatrix![0.3]).unwrap();
        blocks.push(((i, (i + 1) % 3), d));
    }
    NetworkModel::a1(3, 1, blocks).unwrap()
}

fn assert_error_line(out: &Output) {
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    let v: Value = serde_json::from_str(text.trim()).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string(), "{v}");
}

#[test]
fn analyze_min_eps_on_stable_deterministic_model() {
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "m.json", &diagonal_model(&[-1.0, -2.0]));
    let out = posnet(&["analyze", "--model", s(&m), "--lambda", "0.5", "--min-eps"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["feasible"], Value::Bool(true));
    let floor = posnet::policy::NumericPolicy::DEFAULT.eps_floor;
    assert_eq!(v["eps_star"].as_f64().unwrap(), floor);
}

#[test]
fn analyze_unstable_model_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "m.json", &diagonal_model(&[-1.0, 0.5]));
    let out = posnet(&["analyze", "--model", s(&m), "--lambda", "0", "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["feasible"], Value::Bool(false));
}

#[test]
fn analyze_writes_to_out_file() {
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "m.json", &ring());
    let target = dir.path().join("cert.json");
    let out = posnet(&["analyze", "--model", s(&m), "--lambda", "0.1", "--eps", "0.5", "--out", s(&target)]);
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    let code = if v["feasible"].as_bool().unwrap() { 0 } else { 2 };
    assert_eq!(out.status.code(), Some(code));
}

#[test]
fn eps_and_min_eps_are_exclusive() {
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "m.json", &ring());
    assert_error_line(&posnet(&["analyze", "--model", s(&m), "--lambda", "0", "--eps", "0.1", "--min-eps"]));
    assert_error_line(&posnet(&["analyze", "--model", s(&m), "--lambda", "0"]));
}

#[test]
fn malformed_inputs_give_one_json_error_line() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_error_line(&posnet(&["analyze", "--model", s(&bad), "--lambda", "0", "--eps", "0.1"]));
    let missing = dir.path().join("missing.json");
    assert_error_line(&posnet(&["validate", "--model", s(&missing), "--lambda", "0", "--samples", "10", "--seed", "1"]));
    assert_error_line(&posnet(&["design", "--family", s(&bad)]));
    assert_error_line(&posnet(&["frobnicate"]));
    let m = write_model(&dir, "m.json", &ring());
    assert_error_line(&posnet(&["validate", "--model", s(&m), "--lambda", "-1", "--samples", "10", "--seed", "1"]));
}

#[test]
fn validate_exact_matches_enumeration() {
    let dir = TempDir::new().unwrap();
    let model = ring();
    let m = write_model(&dir, "ring.json", &model);
    for lambda in ["0", "0.3"] {
        let out = posnet(&["validate", "--model", s(&m), "--lambda", lambda, "--samples", "2000", "--seed", "9", "--exact"]);
        assert_eq!(out.status.code(), Some(0));
        let v = stdout_json(&out);
        let exact = brute_force_prob(&model, lambda.parse().unwrap()).unwrap();
        assert_eq!(v["exact"].as_f64().unwrap(), exact);
        assert_eq!(v["samples"].as_u64(), Some(2000));
        assert!(v["ci_lower"].as_f64().unwrap() <= v["p_hat"].as_f64().unwrap());
        assert!(v["p_hat"].as_f64().unwrap() <= v["ci_upper"].as_f64().unwrap());
    }
}

#[test]
fn validate_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "ring.json", &ring());
    let args = ["validate", "--model", s(&m), "--lambda", "0.2", "--samples", "5000", "--seed", "3", "--csv"];
    let one = posnet(&[&["--threads", "1"], &args[..]].concat());
    let many = posnet(&[&["--threads", "3"], &args[..]].concat());
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, many.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.starts_with(posnet::montecarlo::McReport::CSV_HEADER));
}

#[test]
fn rate_convention_moves_the_stability_boundary() {
    // Perron value −1: stable at Lyapunov rate 1 (−1 < −0.5), not at state rate 1.
    let dir = TempDir::new().unwrap();
    let m = write_model(&dir, "m.json", &diagonal_model(&[-1.0]));
    let base = ["validate", "--model", s(&m), "--lambda", "1", "--samples", "10", "--seed", "0"];
    let lyap = stdout_json(&posnet(&base));
    let state = stdout_json(&posnet(&[&["--rate-convention", "state"], &base[..]].concat()));
    assert_eq!(lyap["failures"].as_u64(), Some(0));
    assert_eq!(state["failures"].as_u64(), Some(10));
    assert_eq!(state["rate_convention"], "state");
}

fn complete(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

#[test]
fn design_emits_json_and_csv() {
    let dir = TempDir::new().unwrap();
    let a = complete(6);
    let params = SisParams::calibrated(&a, 1.0, 0, NonPrevention::Uniform(0.5)).unwrap();
    let family = sis_design_family(&a, &params, 40.0).unwrap();
    let f = dir.path().join("family.json");
    std::fs::write(&f, family.to_json_string()).unwrap();
    let json_path = dir.path().join("d.json");
    let out = posnet(&["design", "--family", s(&f), "--out", s(&json_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("param,r_star\nr1,"));
    assert_eq!(csv.lines().count(), 7);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["r_star"].as_array().unwrap().len(), 6);
    assert!(v["verification"]["feasible"].as_bool().unwrap());
}

#[test]
fn design_that_cannot_meet_the_cost_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let a = complete(6);
    let params = SisParams::calibrated(&a, 1.0, 0, NonPrevention::Uniform(0.5)).unwrap();
    // Σ 1/r_i ≥ 6 always, so a bound of 5 admits no design.
    let family = sis_design_family(&a, &params, 5.0).unwrap();
    let f = dir.path().join("family.json");
    std::fs::write(&f, family.to_json_string()).unwrap();
    let out = posnet(&["design", "--family", s(&f)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

#[test]
fn demo_fig1_is_monotone_and_reproducible() {
    let args = [
        "demo-sis", "--nodes", "30", "--edge-prob", "0.15", "--seed", "2", "--fig1", "r=0.1,0.3", "lambda=0,0.1,0.2",
    ];
    let out = posnet(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.starts_with("r,lambda,eps_star\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 6);
    for k in 0..6 {
        if k % 3 > 0 {
            assert!(rows[k - 1][2] <= rows[k][2], "{text}");
        }
        if k >= 3 {
            assert!(rows[k - 3][2] <= rows[k][2], "{text}");
        }
    }
    let again = posnet(&[&["--threads", "1"], &args[..]].concat());
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn demo_fig2_writes_degree_table() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("fig2.csv");
    let out = posnet(&[
        "demo-sis", "--nodes", "20", "--edge-prob", "0.6", "--seed", "4", "--fig2", "--cost-bound", "150", "--out", s(&target),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&target).unwrap();
    assert!(text.starts_with("node,in_degree,r_star\n1,"));
    assert_eq!(text.lines().count(), 21);
    assert_error_line(&posnet(&["demo-sis", "--seed", "1", "--fig2"]));
    assert_error_line(&posnet(&["demo-sis", "--seed", "1", "--fig1", "q=1"]));
}
