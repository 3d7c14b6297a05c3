use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feeder-market")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, seed: &str) -> std::path::PathBuf {
    let path = dir.join(format!("pop{seed}.json"));
    let out = bin(&["generate", "--areas", "3", "--sellers", "9", "--buyers", "11", "--seed", seed, "--out", s(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// Everything but wall-clock fields.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.contains("time") && !k.contains("timing"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn run_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let scen = generate(dir.path(), "1");
    let out = dir.path().join("r");
    let o = bin(&["run", "--scenario", s(&scen), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "allocations.csv", "trajectory_area_1.csv", "trajectory_area_3.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(summary(&out)["mode"], "2smc");

    let single = dir.path().join("one");
    let o = bin(&["run", "--scenario", s(&scen), "--mode", "1smc", "--out", s(&single)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(single.join("trajectory_total.csv").is_file());
}

#[test]
fn distributed_run_writes_the_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let scen = generate(dir.path(), "2");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(bin(&["run", "--scenario", s(&scen), "--out", s(&a)]).status.success());
    let o = bin(&["run", "--scenario", s(&scen), "--out", s(&b), "--distributed", "--trace", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in fs::read_dir(&a).unwrap() {
        let name = f.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name.ends_with(".csv") {
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
        }
    }
    let (mut sa, mut sb) = (summary(&a), summary(&b));
    strip_timing(&mut sa);
    strip_timing(&mut sb);
    assert_eq!(sa, sb);
    let trace = fs::read_to_string(b.join("trace.csv")).unwrap();
    assert!(trace.starts_with("seq,market,from,to,variant,payload\n"));
}

#[test]
fn one_sided_scenario_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let scen = generate(dir.path(), "3");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&scen).unwrap()).unwrap();
    v["prosumers"] = Value::Array(vec![]);
    fs::write(&scen, v.to_string()).unwrap();
    let o = bin(&["run", "--scenario", s(&scen), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn missing_scenario_exits_with_input_error() {
    let o = bin(&["run", "--scenario", "/nonexistent/s.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn iteration_cap_exits_two_but_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = generate(dir.path(), "4");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&scen).unwrap()).unwrap();
    v["solver"]["max_iters"] = Value::from(2);
    fs::write(&scen, v.to_string()).unwrap();
    let out = dir.path().join("r");
    let o = bin(&["run", "--scenario", s(&scen), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("summary.json").is_file());
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let a = fs::read(generate(dir.path(), "7")).unwrap();
    let b = fs::read(generate(other.path(), "7")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, fs::read(generate(dir.path(), "8")).unwrap());
}

#[test]
fn compare_prints_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = generate(dir.path(), "9");
    let out = dir.path().join("cmp");
    let o = bin(&["compare", "--scenario", s(&scen), "--out", s(&out)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("1SMC") && text.contains("social welfare"), "{text}");
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn bench_rejects_empty_and_tiny_sizes() {
    assert_eq!(bin(&["bench", "--sizes"]).status.code(), Some(1));
    assert_eq!(bin(&["bench", "--sizes", "1"]).status.code(), Some(1));
}

#[test]
fn bench_writes_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["bench", "--sizes", "20,60", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<_> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("20,3,"));
}
