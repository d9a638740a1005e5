use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hylc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hylc")).args(args).output().unwrap()
}

fn hylc_in(dir: &Path, args: &[&str]) -> Output {
    let mut a: Vec<&str> = args.to_vec();
    a.extend(["--out", dir.to_str().unwrap()]);
    hylc(&a)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(hylc_in(d.path(), &["simulate", "--system", "nope"]).status.code(), Some(1));
    assert_eq!(hylc_in(d.path(), &["simulate", "--system", "tcp", "--params", "m"]).status.code(), Some(1));
    assert_eq!(hylc_in(d.path(), &["simulate", "--system", "tcp", "--params", "zeta=1"]).status.code(), Some(1));
    assert_eq!(hylc_in(d.path(), &["simulate", "--system", "tcp", "--x0", "1"]).status.code(), Some(1));
    assert_eq!(hylc_in(d.path(), &["simulate"]).status.code(), Some(1));
    let bad = d.path().join("bad.json");
    fs::write(&bad, "{\"system\": \"tcp\", \"extra\": 1}").unwrap();
    assert_eq!(hylc_in(d.path(), &["simulate", "--system-file", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(hylc(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn tcp_cycle_report() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["cycle", "--system", "tcp"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&d.path().join("cycle.json"));
    assert_eq!(v["schema"], "hylc/1");
    assert_eq!(v["status"], "ok");
    assert_eq!(v["deviation"], false);
    let mut re: Vec<f64> = v["cycle"]["eigenvalues"].as_array().unwrap().iter().map(|z| z[0].as_f64().unwrap()).collect();
    re.sort_by(f64::total_cmp);
    assert!((re[0] + 0.25).abs() < 1e-4 && re[1].abs() < 1e-4, "{re:?}");
    assert!((v["cycle"]["T_star"].as_f64().unwrap() - 1.2).abs() < 1e-6);
    assert!(d.path().join("cycle.csv").exists());
}

#[test]
fn compass_cycle_flags_the_deviation() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["cycle", "--system", "compass"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&d.path().join("cycle.json"));
    assert_eq!(v["deviation"], true);
    assert!(v["reference"]["note"].is_string());
}

#[test]
fn robust_table_has_one_row_per_level() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(
        d.path(),
        &[
            "robust", "--system", "tcp", "--mode", "inflation", "--eps", "0.005,0.01,0.02,0.03,0.04", "--trials", "2",
            "--jobs", "1",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps,margin,trials,pass_fraction");
    assert_eq!(lines.len(), 6);
    let v = json(&d.path().join("sweep.json"));
    assert_eq!(v["monotone"], true);
    assert_eq!(v["metadata"]["trials"], 2);
}

#[test]
fn robust_rejects_unsorted_levels() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["robust", "--system", "tcp", "--mode", "inflation", "--eps", "0.02,0.01"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn certify_passes_and_fails() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["certify", "--system", "rotation"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&d.path().join("certify.json"))["certificate"]["verdict"], "pass");

    let cert = d.path().join("cert.json");
    fs::write(&cert, r#"{"p": {"1,0": 1.0, "0,0": -0.5}, "x_bar": [0, 0], "n_bar": 2}"#).unwrap();
    let out = hylc_in(d.path(), &["certify", "--system", "tcp", "--certificate", cert.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&d.path().join("certify.json"));
    assert_eq!(v["status"], "fail");
    assert!(v["reason"].is_string());
}

#[test]
fn timer_shift_check() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["certify", "--system", "timer", "--shift", "0.2", "--eps", "0.05,0.25"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&d.path().join("certify.json"));
    let rows = v["incremental"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["holds"], false);
    assert_eq!(rows[1]["holds"], true);
}

#[test]
fn discrete_writes_drift_and_closeness() {
    let d = tempfile::tempdir().unwrap();
    let out = hylc_in(d.path(), &["discrete", "--system", "tcp", "--s", "0.1,0.05,0.01"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.path().join("drift.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let drift: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(drift <= 1e-9, "{line}");
    }
    assert_eq!(json(&d.path().join("closeness.json"))["status"], "ok");
}

#[test]
fn catalog_show_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let show = hylc(&["catalog", "show", "tcp", "--params", "m=0.3"]);
    assert_eq!(show.status.code(), Some(0));
    let spec = d.path().join("tcp.json");
    fs::write(&spec, &show.stdout).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(hylc_in(a.path(), &["simulate", "--system", "tcp", "--params", "m=0.3"]).status.code(), Some(0));
    assert_eq!(hylc_in(b.path(), &["simulate", "--system-file", spec.to_str().unwrap()]).status.code(), Some(0));
    for f in ["trajectory.csv", "domain.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let list: Value = serde_json::from_slice(&hylc(&["catalog", "list", "--json"]).stdout).unwrap();
    assert_eq!(list["systems"].as_array().unwrap().len(), 6);
    assert_eq!(hylc(&["catalog", "show", "nope"]).status.code(), Some(1));
}
