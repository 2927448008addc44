use std::path::Path;
use std::sync::Arc;

use ergodic_hw::config::{ExperimentConfig, ExperimentKind};
use ergodic_hw::experiments;
use ergodic_hw::queue::{
    exact_stationary_cost, simulate_ergodic_cost, SchedulingPolicy, SimConfig,
};
use ergodic_hw::stability::{build_certificate, CertificateOptions};
use ergodic_hw::*;

fn two_class() -> Vec<ClassParams> {
    vec![
        ClassParams::new(0.5, 1.0, 1.0),
        ClassParams::new(1.0, 2.0, 1.0),
    ]
}

fn repo_config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn ctmc_matches_exact_two_classes() {
    let system = QueueSystem::halfin_whitt(&two_class(), 3).unwrap();
    let cost = RunningCost::linear(vec![1.0, 3.0]).unwrap();
    let rounded_field = ConstantControl(SimplexControl::uniform(2));
    for policy in [
        SchedulingPolicy::default_priority(2),
        SchedulingPolicy::static_priority(vec![1, 0]).unwrap(),
        SchedulingPolicy::markov_rounded(Arc::new(rounded_field), 10.0).unwrap(),
    ] {
        let exact = exact_stationary_cost(&system, &policy, &cost, 40).unwrap();
        let sim =
            simulate_ergodic_cost(&system, &policy, &cost, &SimConfig::new(1e5, 2, 8)).unwrap();
        assert!(
            sim.estimate.agrees_with(exact, 3.0),
            "{}: exact {exact}, sim {:?}",
            policy.label(),
            sim.estimate
        );
        assert_eq!(sim.invariant_violations, 0);
    }
}

#[test]
fn two_class_certificate_constants() {
    let model = build_limit_model(&two_class()).unwrap();
    let cost = RunningCost::linear(vec![1.0, 3.0]).unwrap();
    let cert = build_certificate(&model, &cost, &CertificateOptions::default()).unwrap();
    approx::assert_abs_diff_eq!(cert.q[(0, 0)], 1.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(cert.q[(1, 1)], 0.5, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(cert.q[(0, 1)], 0.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(cert.kappa0, 2.0, epsilon = 1e-10);
    approx::assert_abs_diff_eq!(cert.cross, 0.5, epsilon = 1e-10);
    approx::assert_abs_diff_eq!(cert.delta, 1.0, epsilon = 1e-10);
    assert!((cert.c0 - 0.6428).abs() < 1e-3, "{}", cert.c0);
    assert!((cert.r0 - 6.02).abs() < 0.05, "{}", cert.r0);
    assert_eq!(cert.c1, 0.0);
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["d1.toml", "d2.toml"] {
        let cfg = repo_config(name);
        for kind in ExperimentKind::ALL {
            cfg.validate_for(kind)
                .unwrap_or_else(|e| panic!("{name} {kind}: {e}"));
        }
    }
}

#[test]
fn truncation_sweep_writes_artifacts() {
    let mut cfg = repo_config("d2.toml");
    cfg.grid.as_mut().unwrap().h = 0.25;
    cfg.solver.l_values = Some(vec![1.0, 2.0, 5.0]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = experiments::run(ExperimentKind::TruncationSweep, &cfg, dir.path()).unwrap();
    assert!(!outcome.flagged(), "{:?}", outcome.flags);
    let csv = std::fs::read_to_string(dir.path().join("truncation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("l,rho_l"));
    assert_eq!(csv.lines().count(), 4);
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["kind"].as_str(), Some("truncation-sweep"));
    assert_eq!(
        manifest["config_sha256"].as_str(),
        Some(cfg.hash().as_str())
    );
}

#[test]
fn lyapunov_check_reports_no_violations() {
    let mut cfg = repo_config("d2.toml");
    cfg.experiment.samples = 2000;
    cfg.experiment.directions = 4000;
    let dir = tempfile::tempdir().unwrap();
    let outcome = experiments::run(ExperimentKind::LyapunovCheck, &cfg, dir.path()).unwrap();
    assert!(!outcome.flagged());
    let text = std::fs::read_to_string(dir.path().join("lyapunov.txt")).unwrap();
    assert!(text.contains("violations = 0"));
}
