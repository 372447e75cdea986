use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn portkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portkit"))
        .args(args)
        .env("PORTKIT_SCENARIO_DIR", scenarios())
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Copies a shipped scenario into a scratch directory.
fn scratch_copy(name: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    for entry in fs::read_dir(scenarios().join(name)).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, dir.path().join(path.file_name().unwrap())).unwrap();
    }
    dir
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_by_name_prints_the_golden_log() {
    let out = portkit(&["run", "reachable"]);
    assert_eq!(code(&out), 0);
    let golden = fs::read_to_string(scenarios().join("reachable/golden.log")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn every_scenario_matches_its_golden_log() {
    for name in ["search_and_track", "reachable", "tool", "full"] {
        let out = portkit(&["run", name, "--compare", "--out", "/dev/null"]);
        assert_eq!(code(&out), 0, "{name}: {}", stdout(&out));
    }
}

#[test]
fn out_flag_writes_a_file() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("run.log");
    let out = portkit(&["run", "search_and_track", "--out", arg(&log)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty());
    assert!(fs::read_to_string(&log).unwrap().starts_with("0.000 DELIVER C2"));
}

#[test]
fn bless_then_compare_round_trips() {
    let dir = scratch_copy("reachable");
    fs::remove_file(dir.path().join("golden.log")).unwrap();
    let out = portkit(&["run", arg(dir.path()), "--bless"]);
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("golden.log").is_file());
    let out = portkit(&["run", arg(dir.path()), "--compare", "--out", "/dev/null"]);
    assert_eq!(code(&out), 0);
    let out = portkit(&["run", arg(dir.path()), "--compare", "--duration", "1", "--out", "/dev/null"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn malformed_manifest_exits_2() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("scenario.manifest");
    fs::write(&m, "module HeadControl head_control\nteleport HeadControl\n").unwrap();
    let out = portkit(&["run", arg(&m)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn bad_monitor_file_exits_2() {
    let dir = scratch_copy("search_and_track");
    fs::write(dir.path().join("face_to_head.mon"), "filter .certainty >=\n").unwrap();
    assert_eq!(code(&portkit(&["run", arg(dir.path())])), 2);
}

#[test]
fn missing_manifest_exits_1() {
    assert_eq!(code(&portkit(&["run", "/nonexistent/scenario.manifest"])), 1);
}

#[test]
fn strict_mode_refuses_overlapping_rules() {
    let dir = scratch_copy("search_and_track");
    let m = dir.path().join("scenario.manifest");
    let text = fs::read_to_string(&m).unwrap().replace("mode advisory", "mode strict");
    fs::write(&m, text).unwrap();
    let out = portkit(&["run", arg(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("e_face_detected=false"));
    assert_eq!(code(&portkit(&["check", arg(dir.path())])), 3);
}

#[test]
fn check_reports_consistency() {
    let out = portkit(&["check", "reachable"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "consistency: OK");

    let out = portkit(&["check", "search_and_track"]);
    assert_eq!(code(&out), 0);
    let report = stdout(&out);
    assert!(report.starts_with("warning:"), "{report}");
    assert!(report.contains("C1 and C2"), "{report}");
}

#[test]
fn eval_prints_the_truth_value() {
    let out = portkit(&["eval", "not e_taken and e_arm_idle", "e_arm_idle"]);
    assert_eq!((code(&out), stdout(&out).trim()), (0, "true"));
    let out = portkit(&["eval", "not e_taken and e_arm_idle", "e_arm_idle", "e_taken"]);
    assert_eq!((code(&out), stdout(&out).trim()), (0, "false"));
    let out = portkit(&["eval", "true"]);
    assert_eq!((code(&out), stdout(&out).trim()), (0, "true"));
    assert_eq!(code(&portkit(&["eval", "and e_a"])), 2);
}

#[test]
fn diff_compares_logs() {
    let golden = scenarios().join("tool/golden.log");
    assert_eq!(code(&portkit(&["diff", arg(&golden), arg(&golden)])), 0);

    let dir = TempDir::new().unwrap();
    let edited = dir.path().join("edited.log");
    let text = fs::read_to_string(&golden).unwrap().replacen("(\"pull\"", "(\"push\"", 1);
    fs::write(&edited, text).unwrap();
    let out = portkit(&["diff", arg(&golden), arg(&edited)]);
    assert_eq!(code(&out), 4);
    assert!(stdout(&out).contains("push"), "{}", stdout(&out));
}
