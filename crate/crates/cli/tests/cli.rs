use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_D2: &str = r#"
[model]
lambda = [0.5, 1.0]
mu = [1.0, 2.0]
gamma = [1.0, 1.0]

[cost]
h = [1.0, 3.0]

[grid]
L = 3.0
h = 0.25

[sim]
n = 20
horizon = 200.0
seed = 4
ladder = [5, 10]

[policy]
kind = "static-priority"
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergodic-hw"))
        .arg(kind)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn solve_hjb_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_D2);
    let out = dir.path().join("out");
    let o = run("solve-hjb", &cfg, &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(out.join("solve.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("rho,iterations,span_residual,time_step,verification_residual")
    );
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("kind = \"solve-hjb\""));
    assert!(out.join("config.toml").exists());
}

#[test]
fn simulate_queue_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_D2);
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run("simulate-queue", &cfg, &out, &["--seed", seed]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        fs::read(out.join("queue.csv")).unwrap()
    };
    let a = read("a", "11");
    let b = read("b", "11");
    let c = read("c", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("n,policy,mean,std_error,horizon,replicas,fallback_count\n"));
}

#[test]
fn unknown_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL_D2}\n[extra]\nfoo = 1\n"));
    let o = run("solve-hjb", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn odd_moment_order_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL_D2}\n[experiment]\nq = 3\n"));
    let o = run("moment-check", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("even"));
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_D2);
    let o = run("solve-everything", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flagged_run_exits_with_two() {
    // With an allowance of 1e-9 standard errors any sampling noise is a flag.
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[model]
lambda = [1.0]
mu = [1.0]
gamma = [1.0]

[cost]
h = [1.0]

[grid]
L = 4.0
h = 0.1

[sde]
dt = 0.01
horizon = 50.0
seed = 3

[experiment]
std_errors = 1e-9
"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let o = run("simulate-diffusion", &cfg, &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("FLAG:"));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(!manifest.contains("flags = []"));
}
