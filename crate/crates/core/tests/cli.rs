//! End-to-end behaviour of the `hsgs` binary: outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 12] = [
    "--set", "domain.nx=8", "--set", "domain.ny=8", "--set", "domain.nz=8", "--set", "n=8", "--set", "n_z=2", "--set", "t_end=0.01",
];

fn hsgs(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsgs")).args(args).env("HSGS_CACHE_DIR", cache).output().unwrap()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL).collect()
}

#[test]
fn run_writes_ledger_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut args = with_small(&["run", "--out", out.to_str().unwrap()]);
    args.extend(["--set", "checkpoint_every=2", "--set", "noise.modes=2", "--set", "noise.amplitude=0.1"]);
    let r = hsgs(&args, dir.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert!(csv.starts_with("# manifest "));
    assert!(csv.lines().nth(1).unwrap().starts_with("step,time,"));
    assert!(out.join("final.ckp").exists() && out.join("manifest.toml").exists());
    assert!(out.join("checkpoints/step-00000002.ckp").exists());

    let (exp, ckp) = (dir.path().join("exp"), out.join("final.ckp"));
    let mut args = with_small(&["export", "--checkpoint", ckp.to_str().unwrap(), "--what", "v,p_s", "--out", exp.to_str().unwrap()]);
    args.extend(["--set", "noise.modes=2", "--set", "noise.amplitude=0.1"]);
    let r = hsgs(&args, dir.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let files: Vec<_> = std::fs::read_dir(&exp).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(files.len(), 2, "{files:?}");
}

#[test]
fn check_suite_passes_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let r = hsgs(&with_small(&["check", "--suite", "cancellation"]), dir.path());
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("PASS"));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run", "--set", "no_such_key=1"],
        vec!["run", "--set", "dt=-1"],
        vec!["check", "--suite", "nope", "--set", "n=4"],
        vec!["run", "--config", "/nonexistent/config.toml"],
        vec!["frobnicate"],
    ] {
        let r = hsgs(&args, dir.path());
        assert_eq!(r.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckp");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let r = hsgs(&with_small(&["export", "--checkpoint", bad.to_str().unwrap()]), dir.path());
    assert_eq!(r.status.code(), Some(1));
}
