use std::path::Path;
use std::process::{Command, Output};

use edgeplan::cli::{CODEC_HEADER, FL_HEADER, LATENCY_HEADER, MANIFEST_FILE};

fn edgeplan(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeplan"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("usage"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["infer-latency", "--scenario", "/nonexistent/scenario.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn malformed_scenario_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\n[[devices]]\nid = 3\n").unwrap();
    let o = edgeplan(&["plan", "--request", "hi", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unreachable_remote_advisor_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(
        &[
            "plan",
            "--request",
            "What is in the picture?",
            "--advisor",
            "remote",
            "--endpoint",
            "http://127.0.0.1:9",
            "--max-retries",
            "0",
            "--timeout-s",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn infer_latency_writes_every_rate_and_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["infer-latency"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "latency.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), LATENCY_HEADER.join(","));
    assert_eq!(lines.count(), 9 * 5);
    assert!(dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn codec_sweep_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["codec-sweep", "--betas", "1e-4,1e-2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = read(dir.path(), "codec_sweep.csv");
    assert_eq!(sweep.lines().next().unwrap(), CODEC_HEADER.join(","));
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn fl_run_curve_has_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["fl-run", "--config-overrides", "global_rounds=3,n_clients=4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = read(dir.path(), "fl_curve.csv");
    assert_eq!(curve.lines().next().unwrap(), FL_HEADER.join(","));
    assert_eq!(curve.lines().count(), 4);
    let config: serde_json::Value = serde_json::from_str(&read(dir.path(), "fl_config.json")).unwrap();
    assert_eq!(config["n_clients"], 4);
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["fl-run", "--config-overrides", "warp_factor=9"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn manifest_hashes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["plan", "--request", "What is the person holding?"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), MANIFEST_FILE)).unwrap();
    assert_eq!(manifest["command"], "plan");
    let files = manifest["files"].as_object().unwrap();
    assert!(files.contains_key("plan.json") && files.contains_key("plan.csv"));
    let plan: serde_json::Value = serde_json::from_str(&read(dir.path(), "plan.json")).unwrap();
    assert_eq!(plan["plan"]["steps"][0]["task_kind"], "vqa", "{plan}");
}

#[test]
fn demo_prints_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeplan(&["demo"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("pose_detection") && stdout.contains("pose_to_image"), "{stdout}");
    assert!(dir.path().join("demo.csv").exists() && dir.path().join("demo.json").exists());
}
