use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaussmon"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn gaussmon(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

#[test]
fn run_writes_ledger_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sc = scenario("quench.scenario");
    for dir in [&a, &b] {
        let out = gaussmon(&[
            "run",
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--t-final",
            "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ledger = fs::read_to_string(a.path().join("ledger.csv")).unwrap();
    assert!(ledger.starts_with("t,S,S_uc,dSdt,Phi_uc,Pi_uc,Idot,I,Pi\n"));
    assert_eq!(ledger.lines().count(), 2002);
    assert_eq!(ledger, fs::read_to_string(b.path().join("ledger.csv")).unwrap());

    // run.json reproduces the run
    let c = tempfile::tempdir().unwrap();
    let meta = a.path().join("run.json");
    let out = gaussmon(&["run", "--scenario", meta.to_str().unwrap(), "--out", c.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(ledger, fs::read_to_string(c.path().join("ledger.csv")).unwrap());
}

#[test]
fn preset_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaussmon(&[
        "run",
        "--scenario",
        scenario("opo_heterodyne.scenario").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--t-final",
        "1",
        "--preset",
        "homodyne_p",
    ]);
    assert!(out.status.success());
    let meta = fs::read_to_string(dir.path().join("run.json")).unwrap();
    assert!(meta.contains("\"preset\": \"homodyne_p\""), "{meta}");
}

#[test]
fn ensemble_and_steady_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sc = scenario("quench.scenario");
    let sc = sc.to_str().unwrap();
    let out = gaussmon(&["ensemble", "--scenario", sc, "--out", d, "--t-final", "2", "--trajectories", "200", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ensemble.csv").exists());
    assert!(dir.path().join("zscores.json").exists());

    let out = gaussmon(&["ensemble", "--scenario", sc, "--out", d, "--trajectories", "1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = gaussmon(&["steady-state", "--scenario", sc, "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["conditional"]["converged"], true);
    assert!((v["unconditional"][0][0].as_f64().unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn validate_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaussmon(&[
        "validate",
        "--scenario",
        scenario("quench.scenario").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--t-final",
        "5",
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{table}");
    assert!(table.lines().all(|l| l.starts_with("PASS")));
    assert!(table.contains("min Pi_uc"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sc = scenario("quench.scenario");
    let sc = sc.to_str().unwrap();

    let missing = gaussmon(&["run", "--scenario", "/nonexistent/x.scenario", "--out", d]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_preset = gaussmon(&["run", "--scenario", sc, "--out", d, "--preset", "bogus"]);
    assert_eq!(bad_preset.status.code(), Some(1));

    let bad_file = dir.path().join("bad.scenario");
    fs::write(&bad_file, "[model]\nkind = \"quench\"\n[measurement]\npreset = \"general\"\ns = -1.0\n").unwrap();
    let out = gaussmon(&["run", "--scenario", bad_file.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s > 0"));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let unwritable = gaussmon(&["run", "--scenario", sc, "--out", blocker.join("sub").to_str().unwrap(), "--t-final", "0.1"]);
    assert_eq!(unwritable.status.code(), Some(2));

    // far too coarse a step for the hot start: RK4 leaves the physical set
    let diverge = gaussmon(&["run", "--scenario", sc, "--out", d, "--dt", "5", "--t-final", "60"]);
    assert_eq!(diverge.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverge.stderr));
}
