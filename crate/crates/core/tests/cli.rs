use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn subgrape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subgrape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn optimize_creates_missing_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a/b/c");
    let summary = stdout_json(&subgrape(&["optimize", "--scenario", "example1", "--out", out.to_str().unwrap()]));
    assert!(summary["points"][0]["fidelity"].as_f64().unwrap() > 1.0 - 1e-10);
    for file in ["pulse.csv", "field.csv", "errors.csv", "trace.jsonl", "config.resolved.json"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
}

#[test]
fn evaluate_reproduces_stored_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    stdout_json(&subgrape(&["optimize", "--scenario", "example1", "--out", out, "--seed", "3"]));
    let pulse = format!("{out}/pulse.csv");
    let ev_dir = dir.path().join("ev");
    let report = stdout_json(&subgrape(&[
        "evaluate",
        "--scenario",
        "example1",
        "--pulse",
        &pulse,
        "--out",
        ev_dir.to_str().unwrap(),
    ]));
    let stored = report["stored_fidelity"].as_f64().unwrap();
    let model = report["model_fidelity"].as_f64().unwrap();
    assert!((stored - model).abs() < 1e-10, "{stored} vs {model}");
    assert!(ev_dir.join("evaluation.json").is_file());
}

#[test]
fn resolved_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let a = stdout_json(&subgrape(&["optimize", "--scenario", "example1", "--out", first.to_str().unwrap()]));
    let resolved = first.join("config.resolved.json");
    let second = dir.path().join("second");
    let b = stdout_json(&subgrape(&[
        "optimize",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]));
    assert_eq!(a["points"][0]["fidelity"], b["points"][0]["fidelity"]);
}

#[test]
fn zero_pulse_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let pulse = dir.path().join("zero.csv");
    let mut text = String::from("# schema=1 kind=pulse pixel_width_ns=1 controls=x,y\ncontrol,index,t_start_ns,u_rad_per_ns\n");
    for c in ["x", "y"] {
        for j in 0..4 {
            text.push_str(&format!("{c},{j},{j},0\n"));
        }
    }
    write(&pulse, &text);
    let report = stdout_json(&subgrape(&[
        "evaluate",
        "--scenario",
        "example1",
        "--pulse",
        pulse.to_str().unwrap(),
        "--out",
        dir.path().join("ev").to_str().unwrap(),
    ]));
    assert!(report["model_fidelity"].as_f64().unwrap().abs() < 1e-14);
    assert!(report["evaluation"]["mean"].as_f64().unwrap().abs() < 1e-14);
}

#[test]
fn wrong_pulse_length_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pulse = dir.path().join("short.csv");
    write(
        &pulse,
        "# schema=1 kind=pulse pixel_width_ns=1 controls=x,y\ncontrol,index,t_start_ns,u_rad_per_ns\nx,0,0,0\ny,0,0,0\n",
    );
    let out = subgrape(&["evaluate", "--scenario", "example1", "--pulse", pulse.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_field_exits_2_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(&cfg, r#"{"scenario": {"name": "example1"}, "optimizer": {"shrink": 1.5}}"#);
    let out = subgrape(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["path"], "optimizer.shrink");

    write(&cfg, r#"{"scenario": {"name": "example1"}, "transfer": {"kind": "gaussian", "bandwidth": 1}}"#);
    let out = subgrape(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["path"].as_str().unwrap().starts_with("transfer"));
}

#[test]
fn missing_config_file_exits_2() {
    let out = subgrape(&["optimize", "--config", "/nonexistent/run.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn schema_is_printed() {
    let schema = stdout_json(&subgrape(&["validate-config", "--schema"]));
    assert!(schema["properties"]["optimizer"].is_object());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            stdout_json(&subgrape(&["validate-config", "--config", path.to_str().unwrap()]));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
