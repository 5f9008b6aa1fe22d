use std::path::Path;
use std::process::{Command, Output};

use swipt_alloc::scenario::{default_table1, ScenarioConfig};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swipt-alloc")).args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ScenarioConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small() -> ScenarioConfig {
    let mut cfg = default_table1();
    cfg.realizations = 2;
    cfg.mc_samples = 1000;
    cfg
}

#[test]
fn plan_json_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["plan", "--format", "json", "--r-grid", "0.3"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v.is_null());
}

#[test]
fn out_flag_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", &small());
    let to_stdout = run(&["compare", "--config", &cfg, "--arm", "proposed"], dir.path());
    let to_file = run(&["compare", "--config", &cfg, "--arm", "proposed", "--out", "r.csv"], dir.path());
    assert!(to_stdout.status.success() && to_file.status.success());
    assert_eq!(std::fs::read(dir.path().join("r.csv")).unwrap(), to_stdout.stdout);
}

#[test]
fn channel_dump_reproduces_sampled_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let dump = run(&["channels", "--seed", "9", "--out", "ch.csv"], dir.path());
    assert!(dump.status.success());
    let sampled = run(&["allocate", "--seed", "9", "--format", "json"], dir.path());
    let loaded = run(&["allocate", "--seed", "9", "--format", "json", "--channels", "ch.csv"], dir.path());
    assert!(sampled.status.success());
    assert_eq!(sampled.stdout, loaded.stdout);
}

#[test]
fn unreachable_targets_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.sinr_target_db = vec![30.0; 6];
    let path = write_config(dir.path(), "hard.toml", &cfg);
    let out = run(&["allocate", "--config", &path], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "antennas = [").unwrap();
    let out = run(&["plan", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["plan", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
