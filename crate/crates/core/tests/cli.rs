use std::process::Command;

fn zonegp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zonegp"))
}

#[test]
fn make_obs_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = zonegp().args(["make-obs", "--seed", "4", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("observations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    let out = zonegp().args(["validate", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("[PASS] criterion 6"));
}

#[test]
fn missing_emulators_fail_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    std::fs::write(&obs, "zone,time_min,value,noise_sd\n1,19,0.05,0.0005\n").unwrap();
    let out = zonegp().args(["infer", "--emulators", "/nonexistent", "--obs"]).arg(&obs).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-emulator"));
}

#[test]
fn simulate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = zonegp().args(["simulate", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("time_min"));
}
