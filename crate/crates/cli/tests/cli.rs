use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privauction"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is json")
}

const HARDNESS: &str = r#"{"weights":[1,1,1,1],"unit_costs":[1,2,2,2],"budget":1.5,
"interval":{"min":0,"max":1},"database":[0.1,0.9,0.5,0.3]}"#;

#[test]
fn compare_opt_reports_ratio_two() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "hardness.json", HARDNESS);
    let out = run(&["run", inst.to_str().unwrap(), "--compare-opt"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["ratio"], 2.0);
    assert_eq!(v["O"], serde_json::json!([0]));
    assert_eq!(v["branch"], "star");
    assert_eq!(v["oracle"]["objective"], 2.0);
    assert_eq!(v["fractional"]["ell"], 2);
}

#[test]
fn identical_flags_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "inst.json", HARDNESS);
    let args = ["run", inst.to_str().unwrap(), "--seed", "7", "--database", "--compare-opt"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["run", inst.to_str().unwrap(), "--seed", "8", "--database"]);
    assert_ne!(stdout_json(&a)["estimate"]["value"], stdout_json(&c)["estimate"]["value"]);
}

#[test]
fn malformed_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "bad.json", "{\"weights\": [1, 2],\n \"unit_costs\": [1,");
    let out = run(&["run", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 2);
    assert!(out.stdout.is_empty());
}

#[test]
fn zero_weight_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "zero.json",
        r#"{"weights":[0,1],"unit_costs":[1,1],"budget":1,"interval":{"min":0,"max":1}}"#,
    );
    let out = run(&["run", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "validation");
}

#[test]
fn everyone_filtered_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "empty.json",
        r#"{"weights":[1,5],"unit_costs":[100,100],"budget":1,"interval":{"min":0,"max":1}}"#,
    );
    let out = run(&["run", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "empty-instance");
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn tiny_verify_is_quick_and_clean() {
    let start = Instant::now();
    let out = run(&["verify", "--instances", "10", "--seed", "3"]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["passed"], true);
    assert_eq!(v["truthfulness"]["instances"], 10);
}

#[test]
fn verify_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.json",
        r#"{"instance_count": 20, "n_range": [3, 6], "weight_distribution": "integer-grid",
            "cost_distribution": "integer-grid", "budget_rule": {"kind": "integer-grid", "max": 10},
            "arithmetic_mode": "rational"}"#,
    );
    let out = run(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["truthfulness"]["instances"], 20);

    let bad = write(dir.path(), "bad.json", r#"{"instance_count": 5, "arithmetic_mode": "rational"}"#);
    assert_eq!(run(&["verify", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn payment_mutation_exits_three_with_witnesses() {
    let out = run(&["verify", "--instances", "200", "--mutate", "payment-scale:0.9"]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "property-failure");
    let w = &e["witnesses"][0];
    assert!(w["instance_index"].is_u64());
    assert!(w["instance_seed"].is_u64());
    assert!(w["instance"]["weights"].is_array());
    assert_eq!(stdout_json(&out)["passed"], false);
}

#[test]
fn thread_cap_keeps_output() {
    let a = bin()
        .args(["verify", "--instances", "30"])
        .env("PRIVAUCTION_THREADS", "1")
        .output()
        .unwrap();
    let b = bin()
        .args(["verify", "--instances", "30"])
        .env("PRIVAUCTION_THREADS", "3")
        .output()
        .unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let bad = bin()
        .args(["verify", "--instances", "1"])
        .env("PRIVAUCTION_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn weights_knn_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.csv", "0\n1\n2\n");
    let out = run(&["weights", f.to_str().unwrap(), "--query", "0.9", "--method", "knn", "--k", "2"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["weights"], serde_json::json!([0.5, 0.5]));
    assert_eq!(v["index_map"], serde_json::json!([0, 1]));
    assert_eq!(v["dropped"], serde_json::json!([2]));
}

#[test]
fn weights_ridge_fixture_and_instance() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "g.csv", "id,x\na,1\nb,1\n");
    let q = write(dir.path(), "q.csv", "1\n");
    let out = run(&[
        "weights",
        f.to_str().unwrap(),
        "--query-file",
        q.to_str().unwrap(),
        "--method",
        "ridge",
        "--lambda",
        "1",
    ]);
    assert!(out.status.success());
    let w = stdout_json(&out)["weights"].clone();
    for x in w.as_array().unwrap() {
        assert!((x.as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    let out = run(&[
        "weights",
        f.to_str().unwrap(),
        "--query",
        "1",
        "--method",
        "ridge",
        "--lambda",
        "1",
        "--costs",
        "1,2",
        "--budget",
        "3",
    ]);
    assert!(out.status.success());
    let inst = write(dir.path(), "inst.json", &String::from_utf8(out.stdout).unwrap());
    assert!(run(&["run", inst.to_str().unwrap()]).status.success());

    let short = run(&[
        "weights",
        f.to_str().unwrap(),
        "--query",
        "1",
        "--method",
        "ridge",
        "--lambda",
        "1",
        "--costs",
        "1",
        "--budget",
        "3",
    ]);
    assert_eq!(short.status.code(), Some(1));
    assert_eq!(stderr_json(&short)["error"], "dimension-mismatch");
}

#[test]
fn oracle_and_fractional_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "h.json", HARDNESS);
    let o = run(&["--arithmetic", "rational", "oracle", inst.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["x"], serde_json::json!([1, 1, 0, 0]));
    let f = run(&["fractional", inst.to_str().unwrap()]);
    let v = stdout_json(&f);
    assert_eq!(v["objective"], 2.0);
    assert_eq!(v["x_star"], serde_json::json!([1.0, 1.0, 0.0, 0.0]));
    let csv = run(&["--output", "csv", "fractional", inst.to_str().unwrap()]);
    assert!(String::from_utf8(csv.stdout).unwrap().starts_with("index,x_star,payment\n"));
}

#[test]
fn rational_run_matches_float() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "i.json",
        r#"{"weights":[3,-1,2,5,1],"unit_costs":[1,2,2,4,7],"budget":6,"interval":{"min":-1,"max":1}}"#,
    );
    let f = stdout_json(&run(&["run", inst.to_str().unwrap()]));
    let r = stdout_json(&run(&["--arithmetic", "rational", "run", inst.to_str().unwrap()]));
    assert_eq!(f["O"], r["O"]);
    assert_eq!(f["branch"], r["branch"]);
    for (a, b) in f["payments"].as_array().unwrap().iter().zip(r["payments"].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn csv_run_projection() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "h.json", HARDNESS);
    let out = run(&["--output", "csv", "run", inst.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,weight,unit_cost,selected,payment,epsilon"));
    assert_eq!(lines.count(), 4);
}
