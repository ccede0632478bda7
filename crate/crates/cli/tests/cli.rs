use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn schedsec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schedsec"))
        .current_dir(dir)
        .args(args)
        .env_remove("SCHEDSEC_BUDGET")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = schedsec(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_reference_schedule(dir: &Path) {
    fs::write(dir.join("s.json"), r#"{"T":3,"rows":[[0,0,1],[0,1,0],[1,0,0]]}"#).unwrap();
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reproduce_reports_single_spoof_and_is_hash_stable() {
    let tmp = TempDir::new().unwrap();
    let args = ["reproduce-paper", "--trials", "40", "--horizon", "60", "--seed", "5"];
    ok(tmp.path(), &[&args[..], &["--out", "a"]].concat());
    ok(tmp.path(), &[&args[..], &["--out", "b"]].concat());

    let attack = json_file(&tmp.path().join("a/attack.json"));
    assert_eq!(attack["spoofed_count"], 1);
    assert!(!attack["blocked"].as_array().unwrap().is_empty());
    assert_eq!(attack["reference_tuple"]["spoofed_count"], 1);
    assert_eq!(attack["reference_tuple"]["blocked"], serde_json::json!([1, 2]));

    let a = read_dir_sorted(&tmp.path().join("a"));
    let b = read_dir_sorted(&tmp.path().join("b"));
    assert_eq!(a, b);
    let manifest = json_file(&tmp.path().join("a/manifest.json"));
    let listed: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(listed.contains(&"series_optimal_attack.csv"));
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn reproduce_needs_output_directory() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(schedsec(tmp.path(), &["reproduce-paper"]).status.code(), Some(2));
}

#[test]
fn shortest_period_construction_has_period_eight() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["defend", "construct", "--mode", "shortest-period", "-n", "3", "--out", "d"]);
    let policy = json_file(&tmp.path().join("d/policy.json"));
    assert_eq!(policy["T"], 8);
    let verdict: Value = serde_json::from_str(&ok(
        tmp.path(),
        &["verify", "shift-invariance", "--policy", "d/policy.json"],
    ))
    .unwrap();
    assert_eq!(verdict["invariant"], true);
    assert_eq!(verdict["proven"], true);
}

#[test]
fn idle_schedule_is_divergent_everywhere() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("idle.json"), r#"{"T":3,"rows":[[0,0,0],[0,0,0],[0,0,0]]}"#).unwrap();
    let csv = ok(tmp.path(), &["cost", "--schedule", "idle.json", "--format", "csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sensor_index,average_trace,divergent");
    assert_eq!(&lines[1..], ["0,,true", "1,,true", "2,,true"]);
}

#[test]
fn schedule_output_reloads() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["schedule", "--periods", "3", "--out", "o"]);
    let found = json_file(&tmp.path().join("o/schedule.json"));
    fs::write(tmp.path().join("s.json"), found["schedule"].to_string()).unwrap();
    let cost: Value = serde_json::from_str(&ok(tmp.path(), &["cost", "--schedule", "s.json"])).unwrap();
    assert_eq!(cost["cost"], found["cost"]);
}

#[test]
fn attack_methods_agree_on_cost() {
    let tmp = TempDir::new().unwrap();
    write_reference_schedule(tmp.path());
    for method in ["bnb", "brute-force", "unrestricted"] {
        let v: Value = serde_json::from_str(&ok(
            tmp.path(),
            &["attack", "optimal", "--schedule", "s.json", "--method", method],
        ))
        .unwrap();
        assert_eq!(v["spoofed_count"], 1, "{method}");
    }
    let iso: Value = serde_json::from_str(&ok(
        tmp.path(),
        &["attack", "isolate", "--schedule", "s.json", "--target", "1"],
    ))
    .unwrap();
    assert!(iso["blocked"].as_array().unwrap().contains(&serde_json::json!(1)));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    write_reference_schedule(tmp.path());
    assert_eq!(schedsec(tmp.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        schedsec(tmp.path(), &["cost", "--schedule", "s.json", "--taus", "0,0,7"]).status.code(),
        Some(3)
    );
    fs::write(tmp.path().join("bad.json"), r#"{"T":2,"rows":[[0,0,1]]}"#).unwrap();
    assert_eq!(schedsec(tmp.path(), &["cost", "--schedule", "bad.json"]).status.code(), Some(3));
    assert_eq!(schedsec(tmp.path(), &["cost", "--schedule", "missing.json"]).status.code(), Some(3));

    let systems: Value = serde_json::from_str(schedsec_core::systems_io::bundled_systems_json()).unwrap();
    let two = Value::Array(systems.as_array().unwrap()[..2].to_vec());
    fs::write(tmp.path().join("two.json"), two.to_string()).unwrap();
    fs::write(tmp.path().join("heavy.json"), r#"{"T":4,"rows":[[1,1,1,0],[0,0,0,1]]}"#).unwrap();
    let out = schedsec(
        tmp.path(),
        &["--systems", "two.json", "attack", "isolate", "--schedule", "heavy.json", "--target", "0"],
    );
    assert_eq!(out.status.code(), Some(4));

    let out = Command::new(env!("CARGO_BIN_EXE_schedsec"))
        .current_dir(tmp.path())
        .args(["schedule", "--periods", "6"])
        .env("SCHEDSEC_BUDGET", "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn series_csv_layout() {
    let tmp = TempDir::new().unwrap();
    write_reference_schedule(tmp.path());
    let csv = ok(
        tmp.path(),
        &["simulate", "--schedule", "s.json", "--taus", "0,0,2", "--horizon", "6", "--format", "csv"],
    );
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,sensor,trace,running_mean,divergent_flag"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 18);
    for r in &rows {
        let expected = if r[1] == "0" { "0" } else { "1" };
        assert_eq!(r[4], expected);
    }
}

#[test]
fn monte_carlo_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "simulate",
        "--kind",
        "monte-carlo",
        "--mode",
        "same-duty",
        "--trials",
        "30",
        "--horizon",
        "54",
        "--resample-sigma",
        "--seed",
        "9",
    ];
    let a = ok(tmp.path(), &args);
    let b = ok(tmp.path(), &args);
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    let mean = v["summary"]["long_run_mean"].as_f64().unwrap();
    let lower = v["bounds"]["lower"].as_f64().unwrap();
    let upper = v["bounds"]["upper"].as_f64().unwrap();
    assert!(lower <= mean && mean <= upper);
}

#[test]
fn bounds_from_policy_file_match_mode() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["defend", "construct", "--mode", "same-duty", "--out", "p"]);
    let from_file = ok(tmp.path(), &["defend", "bounds", "--policy", "p/policy.json"]);
    let from_mode = ok(tmp.path(), &["defend", "bounds", "--mode", "same-duty"]);
    assert_eq!(from_file, from_mode);
}

#[test]
fn steady_state_csv() {
    let tmp = TempDir::new().unwrap();
    let csv = ok(tmp.path(), &["steady-state", "--ladder", "4", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}
