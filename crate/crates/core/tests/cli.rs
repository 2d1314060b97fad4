use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fidelity-falsify")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn falsify_writes_its_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["falsify", "--sim", "braking", "--budget", "150", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("falsify.json")).unwrap();
    assert!(text.contains("best_robustness"));
}

#[test]
fn satisfied_spec_exits_three_when_a_counterexample_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["falsify", "--sim", "oscillator", "--spec", "G(x < 100)", "--budget", "60", "--out", path(dir.path())];
    assert_eq!(code(&cli(&args)), 0);
    let mut strict = args.to_vec();
    strict.push("--require-counterexample");
    assert_eq!(code(&cli(&strict)), 3);
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(code(&cli(&["falsify", "--sim", "nope", "--out", d])), 1);
    assert_eq!(code(&cli(&["falsify", "--sim", "braking", "--spec", "G(gap >", "--out", d])), 1);
    assert_eq!(code(&cli(&["falsify", "--sim", "braking", "--spec", "G(speed2 > 0)", "--out", d])), 1);
    assert_eq!(code(&cli(&["falsify", "--sim", "braking", "--fidelity", "0.5,2", "--out", d])), 1);
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["joint", "--config", "missing.json", "--out", d])), 1);
    assert_eq!(code(&cli(&["report", "--result", "missing.json", "--format", "xml"])), 1);

    let cfg = dir.path().join("cfg.json");
    let text = std::fs::read_to_string("configs/braking.json").unwrap();
    std::fs::write(&cfg, text.replace("\"seed\": 2024", "\"seed\": 2024, \"turbo\": true")).unwrap();
    let out = cli(&["joint", "--config", path(&cfg), "--out", d]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("turbo"));
    std::fs::write(&cfg, text.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
    assert_eq!(code(&cli(&["analyze", "--config", path(&cfg), "--out", d])), 1);
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&cli(&["--help"])), 0);
    assert_eq!(code(&cli(&["--version"])), 0);
}
