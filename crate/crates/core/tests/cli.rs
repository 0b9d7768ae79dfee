use std::process::Command;

fn plan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plan"))
}

#[test]
fn input_errors_exit_with_one() {
    let out = plan().args(["run", "/nonexistent/scenario.json", "--out", "/tmp/unused"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = plan().args(["builtin", "scenario9", "--out", "/tmp/unused"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn builtin_run_writes_artifacts_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let out = plan().args(["builtin", "scenario1", "--out"]).arg(dir.path()).arg("--trace").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["trajectory.csv", "controls.csv", "severity.csv", "summary.json", "scenario.json", "trace_level1.csv", "trace_level2.csv"] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }

    let out = plan().arg("compare").arg(dir.path()).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["delta_j1"], 0.0);
    assert_eq!(cmp["delta_j2"], 0.0);
}
