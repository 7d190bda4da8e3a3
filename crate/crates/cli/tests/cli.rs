use std::path::PathBuf;
use std::process::Command;

fn msp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msp"))
}

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn run_writes_outputs() {
    let dir = scratch("cli_run");
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, "# tiny run\nneurons = 64\nsteps = 2000\nranks = 2\n").unwrap();
    let out = msp()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--engine", "barnes_hut", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "timing.csv", "network.csv", "metrics.svg"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_engine_is_a_usage_error() {
    let out = msp().args(["run", "--engine", "exact"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = scratch("cli_bad");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "neurons = 64\n\nspeed = 3\n").unwrap();
    let out = msp().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains('3'), "{err}");
}

#[test]
fn missing_config_fails() {
    let out = msp().args(["scaling", "--config", "/nonexistent/x.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
