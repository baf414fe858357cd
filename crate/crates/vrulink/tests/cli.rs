use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrulink::latency::LatencyParams;
use vrulink::scenario::track_occlusion;

fn vrulink(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrulink"))
        .args(args)
        .current_dir(dir)
        .env_remove("VRULINK_OUT")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn scenario_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_log_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = vrulink(&["run", "--scenario", &scenario_file("track-occlusion.json"), "--seed", "42"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = dir.path().join("track-occlusion-42.events.jsonl");
    let csv = fs::read_to_string(dir.path().join("track-occlusion-42.metrics.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
    assert_eq!(
        fs::read_to_string(&log).unwrap(),
        fs::read_to_string(golden("track-occlusion-42.events.jsonl")).unwrap()
    );
}

#[test]
fn out_dir_comes_from_flag_or_env() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file("bridge-outlier.json");
    let out = vrulink(&["run", "--scenario", &scenario, "--out", "a"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("a/bridge-outlier-42.metrics.csv").exists());
    let out = Command::new(env!("CARGO_BIN_EXE_vrulink"))
        .args(["run", "--scenario", &scenario, "--seed", "3"])
        .current_dir(dir.path())
        .env("VRULINK_OUT", "b")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("b/bridge-outlier-3.events.jsonl").exists());
}

#[test]
fn missed_deadline_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = track_occlusion();
    spec.latency = LatencyParams::fixed(5_000);
    let path = dir.path().join("slow.json");
    fs::write(&path, spec.to_json_pretty()).unwrap();
    let out = vrulink(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains(",false,"));
}

#[test]
fn missing_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = vrulink(&["run", "--scenario", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = track_occlusion();
    spec.rsus[0].registration.relevance_radius_m = -5.0;
    let path = dir.path().join("bad.json");
    fs::write(&path, spec.to_json_pretty()).unwrap();
    let out = vrulink(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("rsus[0].relevance_radius_m"), "{}", stderr(&out));

    let text = track_occlusion().to_json_pretty().replace("\"step_ms\": 100", "\"step_ms\": \"fast\"");
    fs::write(&path, text).unwrap();
    let out = vrulink(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("step_ms"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vrulink(&[], dir.path()).status.code(), Some(1));
    assert_eq!(vrulink(&["fly"], dir.path()).status.code(), Some(1));
    assert_eq!(vrulink(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn replay_of_golden_log_matches() {
    let dir = tempfile::tempdir().unwrap();
    let log = golden("track-occlusion-42.events.jsonl");
    let out = vrulink(&["replay", log.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("replay matches"));
}

#[test]
fn replay_reports_metric_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("x.events.jsonl");
    fs::copy(golden("track-occlusion-42.events.jsonl"), &log).unwrap();
    let csv = fs::read_to_string(golden("track-occlusion-42.metrics.csv")).unwrap();
    fs::write(dir.path().join("x.metrics.csv"), csv.replace(",true,", ",false,")).unwrap();
    let out = vrulink(&["replay", log.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn truncated_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(golden("track-occlusion-42.events.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = 40;
    let mut cut = lines[..keep - 1].join("\n");
    cut.push('\n');
    cut.push_str(&lines[keep - 1][..lines[keep - 1].len() / 2]);
    let log = dir.path().join("cut.events.jsonl");
    fs::write(&log, cut).unwrap();
    let out = vrulink(&["replay", log.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(&format!("line {keep}")), "{}", stderr(&out));
}

#[test]
fn report_aggregates_one_hundred_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file("track-occlusion.json");
    let mut logs = Vec::new();
    for seed in 0..100 {
        let s = seed.to_string();
        let out = vrulink(&["run", "--scenario", &scenario, "--seed", &s, "--out", "runs"], dir.path());
        assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", stderr(&out));
        logs.push(format!("runs/track-occlusion-{seed}.events.jsonl"));
    }
    let mut args = vec!["report", "--out", "all.csv"];
    args.extend(logs.iter().map(String::as_str));
    let out = vrulink(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("all.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(vrulink::metrics::CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    for (seed, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("track-occlusion,{seed},car:7,")), "{row}");
    }
}

#[test]
fn serve_on_a_busy_port_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let busy = std::net::TcpListener::bind(("0.0.0.0", 0)).unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let out = vrulink(&["serve", "--scenario", &scenario_file("urban-coverage.json"), "--port", &port], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(&port), "{}", stderr(&out));
}

#[test]
fn scenarios_subcommand_writes_the_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = vrulink(&["scenarios", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for name in ["urban-coverage.json", "track-occlusion.json", "bridge-outlier.json"] {
        let written = fs::read_to_string(dir.path().join("s").join(name)).unwrap();
        assert_eq!(written, fs::read_to_string(scenario_file(name)).unwrap(), "{name}");
    }
}
