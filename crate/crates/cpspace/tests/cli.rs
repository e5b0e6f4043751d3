//! End-to-end tests of the `cpspace` binary: exit codes, file outputs, and
//! byte-level determinism of the verification report.

use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_cpspace");

const BASE: &str = "\
[space]
dimension = 1
lower = -1
upper = 1
density = gaussian
amplitude = 1.0
center = 0

[tau]
law = mixture
total_mass = 1
atoms = 1 2
weights = 0.5 0.5

[job]
command = verify
check = moments
n = 4000
seed = 7
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn verify_single_check_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("out");
    let res = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--csv"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout.contains("PASS"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rows = report.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["pass"], serde_json::json!(true));
        assert!(row["anchor"].as_str().unwrap().contains("moment"));
    }
    assert!(out.join("report.csv").exists());
    assert!(out.join("metadata.json").exists());
}

#[test]
fn report_json_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let mut bytes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("out{run}"));
        let res = Command::new(BIN)
            .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(res.status.success());
        bytes.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn sample_writes_header_and_n_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("n = 4000", "n = 110"));
    let out = dir.path().join("out");
    let res = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "sample"])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let data = fs::read_to_string(out.join("data.jsonl")).unwrap();
    let lines: Vec<&str> = data.lines().collect();
    assert_eq!(lines.len(), 111);
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["seed"], serde_json::json!(7));
    assert!(header["config_hash"].is_string());
    for line in &lines[1..] {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["atoms"].is_array());
    }
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}dt = 0.005\nT = 0.05\nstride = 2\n", BASE.replace("n = 4000", "n = 200"));
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let res = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "simulate"])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let data = fs::read_to_string(out.join("trajectory.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> =
        data.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // 11 snapshots at stride 2 -> times 0, .01, .02, .03, .04, .05
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["time"], serde_json::json!(0.0));
    assert_eq!(rows.last().unwrap()["time"], serde_json::json!(0.05));
    let n0 = rows[0]["atoms"].as_array().unwrap().len();
    for r in &rows {
        assert_eq!(r["atoms"].as_array().unwrap().len(), n0);
    }
}

#[test]
fn config_errors_exit_two_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}mystery = 1\n"));
    let res = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("mystery"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn missing_config_file_exits_two() {
    let res = Command::new(BIN)
        .args(["--config", "/nonexistent/path.cfg"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn cli_check_argument_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("out");
    let res = Command::new(BIN)
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "verify",
            "laplace",
        ])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for row in report.as_array().unwrap() {
        assert!(row["name"].as_str().unwrap().contains("laplace"));
    }
}

#[test]
fn unknown_check_group_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let res = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "verify", "frobnicate"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}
