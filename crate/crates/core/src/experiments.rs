//! Config-driven experiment runners. Each writes its artifacts into an
//! output directory together with `config.toml` (the canonical config) and
//! `manifest.toml` (config hash, version, wall-clock, files, flags).
//!
//! Flags mark failed property checks. They are finite-sample heuristics:
//! the underlying results are limits without rates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, PolicyKind};
use crate::diffusion::{simulate_diffusion_cost, SdePathConfig};
use crate::error::{Error, Result};
use crate::hjb::{
    epsilon_bound_check, solve_discounted, solve_ergodic, truncation_sweep, verification_residual,
    write_fields, ErgodicSolution, Perturbation,
};
use crate::model::{
    build_limit_model, ClassParams, ConstantControl, DiffusionModel, HTilde, MarkovControl,
    QueueSystem, RunningCost,
};
use crate::queue::{
    simulate_ergodic_cost, simulate_time_average, SchedulingPolicy, SimConfig, SimReport,
};
use crate::stability::{build_certificate, check_drift_inequality, CertificateOptions};
use crate::CostEstimate;

/// Result of one experiment run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Failed property checks, one message each.
    pub flags: Vec<String>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: &'a str,
    config_sha256: String,
    version: &'a str,
    wall_clock_seconds: f64,
    files: Vec<String>,
    flags: &'a [String],
}

/// Validates the config for `kind`, runs it, and writes the manifest.
pub fn run(kind: ExperimentKind, config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    config.validate_for(kind)?;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut outcome = match kind {
        ExperimentKind::SolveHjb => run_solve_hjb(config, out),
        ExperimentKind::SimulateQueue => run_simulate_queue(config, out),
        ExperimentKind::SimulateDiffusion => run_simulate_diffusion(config, out),
        ExperimentKind::Convergence => run_convergence(config, out),
        ExperimentKind::TruncationSweep => run_truncation_sweep(config, out),
        ExperimentKind::EpsilonBound => run_epsilon_bound(config, out),
        ExperimentKind::VanishingDiscount => run_vanishing_discount(config, out),
        ExperimentKind::LyapunovCheck => run_lyapunov_check(config, out),
        ExperimentKind::MomentCheck => run_moment_check(config, out),
    }?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, config.to_toml())?;
    outcome.files.push(config_path);

    let manifest = Manifest {
        kind: kind.name(),
        config_sha256: config.hash(),
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: outcome
            .files
            .iter()
            .map(|p| {
                p.file_name().map_or_else(
                    || p.display().to_string(),
                    |f| f.to_string_lossy().into_owned(),
                )
            })
            .collect(),
        flags: &outcome.flags,
    };
    let manifest_path = out.join("manifest.toml");
    std::fs::write(
        &manifest_path,
        toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    outcome.files.push(manifest_path);
    Ok(outcome)
}

struct Setup {
    classes: Vec<ClassParams>,
    model: DiffusionModel,
    cost: RunningCost,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let classes = config.model.classes()?;
    let model = build_limit_model(&classes)?;
    let cost = config.cost.build()?;
    Ok(Setup {
        classes,
        model,
        cost,
    })
}

fn solve_star(config: &ExperimentConfig, s: &Setup) -> Result<ErgodicSolution> {
    let grid = Arc::new(config.grid()?);
    Ok(solve_ergodic(
        &s.model,
        &s.cost,
        grid,
        &config.truncation()?,
        &Perturbation::none(),
        &config.solver.options(),
    )?)
}

fn write_csv<T: Serialize>(path: PathBuf, rows: &[T], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv::Writer::from_path(&path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    files.push(path);
    Ok(())
}

fn sim_config(config: &ExperimentConfig, rung: Option<usize>) -> Result<SimConfig> {
    let sim = config.sim()?;
    let horizon = rung.map_or(sim.horizon, |r| sim.horizon_for(r));
    Ok(SimConfig {
        horizon,
        burn_in: sim.burn_in_for(horizon),
        replicas: sim.replicas,
        seed: sim.seed,
        batches: sim.batches,
        initial: None,
    })
}

/// Builds the configured scheduling policy; `control` is required for the
/// rounded policy.
fn build_policy(
    config: &ExperimentConfig,
    kind: PolicyKind,
    system: &QueueSystem,
    cost: &RunningCost,
    control: Option<Arc<dyn MarkovControl>>,
) -> Result<SchedulingPolicy> {
    let d = system.dim();
    Ok(match kind {
        PolicyKind::StaticPriority => match &config.policy.order {
            Some(order) => SchedulingPolicy::static_priority(order.clone())?,
            None => SchedulingPolicy::default_priority(d),
        },
        PolicyKind::CmuTheta => SchedulingPolicy::cmu_theta(cost, system),
        PolicyKind::MarkovRounded => {
            let control = control.ok_or_else(|| {
                Error::Config("markov-rounded needs a solved control field".into())
            })?;
            SchedulingPolicy::markov_rounded(control, config.policy.k)?
        }
        PolicyKind::FixedFraction => {
            let u = config
                .policy
                .u
                .clone()
                .ok_or_else(|| Error::Config("fixed-fraction needs policy.u".into()))?;
            SchedulingPolicy::FixedFraction {
                u: crate::model::SimplexControl::new(u)?,
            }
        }
    })
}

#[derive(Serialize)]
struct QueueRow {
    n: u64,
    policy: String,
    mean: f64,
    std_error: f64,
    horizon: f64,
    replicas: usize,
    fallback_count: u64,
}

fn queue_row(n: u64, policy: &SchedulingPolicy, report: &SimReport) -> QueueRow {
    QueueRow {
        n,
        policy: policy.label().to_string(),
        mean: report.estimate.mean,
        std_error: report.estimate.std_error,
        horizon: report.estimate.horizon,
        replicas: report.estimate.replicas,
        fallback_count: report.fallback_count,
    }
}

fn check_invariants(report: &SimReport, n: u64, flags: &mut Vec<String>) {
    if report.invariant_violations > 0 {
        flags.push(format!(
            "n = {n}: {} transitions violated work conservation or nonnegativity",
            report.invariant_violations
        ));
    }
}

#[derive(Serialize)]
struct SolveRow {
    rho: f64,
    iterations: usize,
    span_residual: f64,
    time_step: f64,
    verification_residual: f64,
}

pub fn run_solve_hjb(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let sol = solve_star(config, &s)?;
    let residual = verification_residual(
        &s.model,
        &s.cost,
        &config.truncation()?,
        &Perturbation::none(),
        &config.solver.options(),
        &sol,
    )?;
    let mut outcome = Outcome::default();
    write_csv(
        out.join("solve.csv"),
        &[SolveRow {
            rho: sol.rho,
            iterations: sol.iterations,
            span_residual: sol.span_residual,
            time_step: sol.time_step,
            verification_residual: residual,
        }],
        &mut outcome.files,
    )?;
    let fields = out.join("fields.txt");
    write_fields(
        BufWriter::new(File::create(&fields)?),
        &sol.value,
        &sol.control,
    )?;
    outcome.files.push(fields);
    outcome.summary.push(format!(
        "rho_* = {:.6} after {} iterations (verification residual {residual:.2e})",
        sol.rho, sol.iterations
    ));
    Ok(outcome)
}

pub fn run_simulate_queue(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let n = config.sim()?.n.expect("validated");
    let system = QueueSystem::halfin_whitt(&s.classes, n)?;
    let control: Option<Arc<dyn MarkovControl>> = if config.policy.kind == PolicyKind::MarkovRounded
    {
        Some(Arc::new(solve_star(config, &s)?.control))
    } else {
        None
    };
    let policy = build_policy(config, config.policy.kind, &system, &s.cost, control)?;
    let report = simulate_ergodic_cost(&system, &policy, &s.cost, &sim_config(config, None)?)?;
    let mut outcome = Outcome::default();
    check_invariants(&report, n, &mut outcome.flags);
    write_csv(
        out.join("queue.csv"),
        &[queue_row(n, &policy, &report)],
        &mut outcome.files,
    )?;
    outcome.summary.push(format!(
        "n = {n}, {}: {:.6} ± {:.6} ({} events, {} fallbacks)",
        policy.label(),
        report.estimate.mean,
        report.estimate.std_error,
        report.events,
        report.fallback_count
    ));
    Ok(outcome)
}

#[derive(Serialize)]
struct DiffusionRow<'a> {
    label: &'a str,
    mean: f64,
    std_error: f64,
    dt: f64,
    horizon: f64,
}

pub fn run_simulate_diffusion(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let sol = solve_star(config, &s)?;
    let sde = config.sde()?;
    let half_width = config.grid()?.max_half_width();
    let mut cfg = SdePathConfig::new(sde.dt, sde.horizon, sde.replicas, sde.seed)
        .with_guard_radius(10.0 * half_width);
    cfg.batches = sde.batches;
    if let Some(b) = sde.burn_in {
        cfg.burn_in = b;
    }
    let frozen = ConstantControl(config.frozen_control()?);
    let runs: [(&str, &dyn MarkovControl); 2] = [("hjb", &sol.control), ("u0", &frozen)];
    let mut rows = Vec::new();
    let mut outcome = Outcome::default();
    for (label, control) in runs {
        let est = simulate_diffusion_cost(&s.model, &s.cost, control, &cfg)?;
        outcome
            .summary
            .push(format!("{label}: {:.6} ± {:.6}", est.mean, est.std_error));
        if label == "hjb" && !est.agrees_with(sol.rho, config.experiment.std_errors) {
            outcome.flags.push(format!(
                "diffusion estimate {:.6} ± {:.6} disagrees with rho_* = {:.6}",
                est.mean, est.std_error, sol.rho
            ));
        }
        rows.push(DiffusionRow {
            label,
            mean: est.mean,
            std_error: est.std_error,
            dt: cfg.dt,
            horizon: cfg.horizon,
        });
    }
    outcome.summary.insert(0, format!("rho_* = {:.6}", sol.rho));
    write_csv(out.join("diffusion.csv"), &rows, &mut outcome.files)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct ConvergenceRow {
    n: u64,
    #[serde(rename = "Vhat_n")]
    vhat_n: f64,
    std_error: f64,
    rho_star: f64,
    gap: f64,
}

/// Solves the HJB, rounds its control into a queue policy and estimates
/// the prelimit cost along the `n`-ladder. Flags a gap that fails to
/// shrink from the first to the last rung; with `compare_priority`, also
/// flags static priority falling below `ρ_*` or beating the rounded policy
/// (both checked at the largest `n`).
pub fn run_convergence(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let sol = solve_star(config, &s)?;
    let rho = sol.rho;
    let control: Arc<dyn MarkovControl> = Arc::new(sol.control);
    let ladder = config.sim()?.ladder.clone();
    let k = config.experiment.std_errors;
    let mut rows = Vec::new();
    let mut policy_rows = Vec::new();
    let mut outcome = Outcome::default();
    let mut last_pair: Option<(CostEstimate, CostEstimate)> = None;
    for (rung, &n) in ladder.iter().enumerate() {
        let system = QueueSystem::halfin_whitt(&s.classes, n)?;
        let cfg = sim_config(config, Some(rung))?;
        let rounded = build_policy(
            config,
            PolicyKind::MarkovRounded,
            &system,
            &s.cost,
            Some(control.clone()),
        )?;
        let report = simulate_ergodic_cost(&system, &rounded, &s.cost, &cfg)?;
        check_invariants(&report, n, &mut outcome.flags);
        let est = report.estimate.clone();
        rows.push(ConvergenceRow {
            n,
            vhat_n: est.mean,
            std_error: est.std_error,
            rho_star: rho,
            gap: (est.mean - rho).abs(),
        });
        outcome.summary.push(format!(
            "n = {n}: Vhat = {:.6} ± {:.6}, gap {:.6}",
            est.mean,
            est.std_error,
            (est.mean - rho).abs()
        ));
        policy_rows.push(queue_row(n, &rounded, &report));
        if config.experiment.compare_priority {
            let priority =
                build_policy(config, PolicyKind::StaticPriority, &system, &s.cost, None)?;
            let prio = simulate_ergodic_cost(&system, &priority, &s.cost, &cfg)?;
            check_invariants(&prio, n, &mut outcome.flags);
            policy_rows.push(queue_row(n, &priority, &prio));
            last_pair = Some((est, prio.estimate));
        }
    }
    if rows.len() >= 2 {
        let (first, last) = (&rows[0], &rows[rows.len() - 1]);
        if !(last.gap < first.gap) {
            outcome.flags.push(format!(
                "gap does not shrink: {:.6} at n = {} vs {:.6} at n = {}",
                last.gap, last.n, first.gap, first.n
            ));
        }
    }
    if let Some((rounded, prio)) = last_pair {
        let n = *ladder.last().expect("nonempty ladder");
        if prio.mean < rho - k * prio.std_error {
            outcome.flags.push(format!(
                "static priority {:.6} ± {:.6} below rho_* = {rho:.6} at n = {n}",
                prio.mean, prio.std_error
            ));
        }
        let combined = (rounded.std_error.powi(2) + prio.std_error.powi(2)).sqrt();
        if rounded.mean > prio.mean + k * combined {
            outcome.flags.push(format!(
                "rounded policy {:.6} worse than static priority {:.6} beyond {k} combined std errors at n = {n}",
                rounded.mean, prio.mean
            ));
        }
    }
    outcome.summary.insert(0, format!("rho_* = {rho:.6}"));
    write_csv(out.join("convergence.csv"), &rows, &mut outcome.files)?;
    write_csv(out.join("policies.csv"), &policy_rows, &mut outcome.files)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct TruncationCsvRow {
    l: f64,
    rho_l: f64,
}

/// `ρ_l` over the configured radii. Flags monotonicity violations and, when
/// the largest radius reaches the grid half-width, a mismatch with `ρ_*`.
pub fn run_truncation_sweep(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let grid = Arc::new(config.grid()?);
    let l_values = config.l_values()?;
    let tol = config.experiment.monotone_tol;
    let report = truncation_sweep(
        &s.model,
        &s.cost,
        grid.clone(),
        &l_values,
        &Perturbation::none(),
        tol,
        &config.solver.options(),
    )?;
    let mut outcome = Outcome::default();
    for (a, b) in &report.violations {
        outcome.flags.push(format!(
            "rho_l increases from l = {a} to l = {b} beyond {tol}"
        ));
    }
    let mut untruncated = config.clone();
    untruncated.trunc.l = None;
    let star = solve_star(&untruncated, &s)?;
    if let Some(last) = report.rows.last() {
        if last.l >= grid.max_half_width() && (last.rho_l - star.rho).abs() > tol {
            outcome.flags.push(format!(
                "rho_l = {:.6} at l = {} differs from rho_* = {:.6}",
                last.rho_l, last.l, star.rho
            ));
        }
    }
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| TruncationCsvRow {
            l: r.l,
            rho_l: r.rho_l,
        })
        .collect();
    for r in &rows {
        outcome
            .summary
            .push(format!("l = {}: rho_l = {:.6}", r.l, r.rho_l));
    }
    outcome.summary.push(format!("rho_* = {:.6}", star.rho));
    write_csv(out.join("truncation.csv"), &rows, &mut outcome.files)?;
    Ok(outcome)
}

/// `h̃` with `c₀, δ` taken from the stability certificate.
fn h_tilde(config: &ExperimentConfig, s: &Setup) -> Result<HTilde> {
    let cert = build_certificate(
        &s.model,
        &s.cost,
        &CertificateOptions {
            directions: config.experiment.directions,
            seed: config.experiment.seed,
        },
    )?;
    Ok(HTilde::new(&s.cost, cert.c0, cert.delta))
}

#[derive(Serialize)]
struct EpsilonCsvRow {
    epsilon: f64,
    rho_epsilon: f64,
    rho_star: f64,
    upper_bound: f64,
    lower_ok: bool,
    upper_ok: bool,
}

pub fn run_epsilon_bound(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let h = h_tilde(config, &s)?;
    let report = epsilon_bound_check(
        &s.model,
        &s.cost,
        Arc::new(config.grid()?),
        &config.truncation()?,
        &config.solver.epsilon,
        &h,
        config.experiment.epsilon_slack,
        &config.solver.options(),
    )?;
    let mut outcome = Outcome::default();
    if !report.passed() {
        outcome
            .flags
            .push("epsilon bounds or monotonicity in epsilon violated".into());
    }
    outcome.summary.push(format!(
        "rho_* = {:.6}, k0 = {:.6}",
        report.rho_star, report.k0
    ));
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            outcome.summary.push(format!(
                "eps = {}: rho_eps = {:.6} <= {:.6}",
                r.epsilon, r.rho_epsilon, r.upper_bound
            ));
            EpsilonCsvRow {
                epsilon: r.epsilon,
                rho_epsilon: r.rho_epsilon,
                rho_star: report.rho_star,
                upper_bound: r.upper_bound,
                lower_ok: r.lower_ok,
                upper_ok: r.upper_ok,
            }
        })
        .collect();
    write_csv(out.join("epsilon.csv"), &rows, &mut outcome.files)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct VanishingRow {
    alpha: f64,
    alpha_v0: f64,
    rho_star: f64,
    value_gap: f64,
    sup_distance: f64,
}

/// `αV_α(0)` against `ρ_*` and `V_α − V_α(0)` against `V_*` on the ball of
/// radius `experiment.radius`, for the configured (decreasing) `α`.
pub fn run_vanishing_discount(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let star = solve_star(config, &s)?;
    let grid = Arc::new(config.grid()?);
    let trunc = config.truncation()?;
    let options = config.solver.options();
    let mut rows: Vec<VanishingRow> = Vec::new();
    let mut outcome = Outcome::default();
    for &alpha in &config.solver.alpha {
        let v = solve_discounted(
            &s.model,
            &s.cost,
            grid.clone(),
            &trunc,
            alpha,
            &Perturbation::none(),
            &options,
        )?;
        let alpha_v0 = alpha * v.at_origin();
        let row = VanishingRow {
            alpha,
            alpha_v0,
            rho_star: star.rho,
            value_gap: (alpha_v0 - star.rho).abs(),
            sup_distance: v
                .normalized()
                .sup_distance_within(&star.value, config.experiment.radius),
        };
        outcome.summary.push(format!(
            "alpha = {alpha}: alpha V(0) = {:.6}, |gap| = {:.3e}, sup dist = {:.3e}",
            row.alpha_v0, row.value_gap, row.sup_distance
        ));
        rows.push(row);
    }
    for w in rows.windows(2) {
        if !(w[1].value_gap < w[0].value_gap) {
            outcome.flags.push(format!(
                "|alpha V(0) - rho_*| does not decrease from alpha = {} to {}",
                w[0].alpha, w[1].alpha
            ));
        }
        if !(w[1].sup_distance < w[0].sup_distance) {
            outcome.flags.push(format!(
                "sup distance to V_* does not decrease from alpha = {} to {}",
                w[0].alpha, w[1].alpha
            ));
        }
    }
    outcome
        .summary
        .insert(0, format!("rho_* = {:.6}", star.rho));
    write_csv(out.join("vanishing.csv"), &rows, &mut outcome.files)?;
    Ok(outcome)
}

/// Text report of the certificate and of the sampled drift check.
pub fn run_lyapunov_check(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let cert = build_certificate(
        &s.model,
        &s.cost,
        &CertificateOptions {
            directions: config.experiment.directions,
            seed: config.experiment.seed,
        },
    )?;
    let report = check_drift_inequality(
        &cert,
        &s.model,
        config.experiment.samples,
        None,
        config.experiment.seed,
    );
    let path = out.join("lyapunov.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    let d = cert.q.nrows();
    for i in 0..d {
        let row: Vec<String> = (0..d).map(|j| format!("{:.12e}", cert.q[(i, j)])).collect();
        writeln!(w, "Q[{i}] = {}", row.join(" "))?;
    }
    writeln!(w, "kappa0 = {:.12e}", cert.kappa0)?;
    writeln!(w, "C = {:.12e}", cert.cross)?;
    writeln!(w, "delta = {:.12e}", cert.delta)?;
    writeln!(w, "c0 = {:.12e}", cert.c0)?;
    writeln!(w, "c1 = {:.12e}", cert.c1)?;
    writeln!(w, "R0 = {:.12e}", cert.r0)?;
    writeln!(w, "m = {}", cert.m)?;
    writeln!(w, "samples = {}", report.samples)?;
    writeln!(w, "violations = {}", report.violations)?;
    writeln!(w, "violation_fraction = {:.6e}", report.violation_fraction)?;
    writeln!(w, "worst_margin = {:.12e}", report.worst_margin)?;
    w.flush()?;
    let mut outcome = Outcome::default();
    outcome.files.push(path);
    if report.violations > 0 {
        outcome.flags.push(format!(
            "drift inequality violated at {} of {} samples",
            report.violations, report.samples
        ));
    }
    outcome.summary.push(format!(
        "kappa0 = {:.4}, delta = {:.4}, c0 = {:.4}, c1 = {:.4}, R0 = {:.4}",
        cert.kappa0, cert.delta, cert.c0, cert.c1, cert.r0
    ));
    outcome.summary.push(format!(
        "violation fraction {} (worst margin {:.4e})",
        report.violation_fraction, report.worst_margin
    ));
    Ok(outcome)
}

#[derive(Serialize)]
struct MomentRow {
    n: u64,
    q: u32,
    moment: f64,
    std_error: f64,
}

/// Time average of `|X̂ⁿ|^q` along the ladder under the configured policy.
/// Flags a sequence that increases at every rung and ends more than twice
/// its first value.
pub fn run_moment_check(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let q = config.experiment.q;
    let control: Option<Arc<dyn MarkovControl>> = if config.policy.kind == PolicyKind::MarkovRounded
    {
        Some(Arc::new(solve_star(config, &s)?.control))
    } else {
        None
    };
    let ladder = config.sim()?.ladder.clone();
    let mut rows = Vec::new();
    let mut outcome = Outcome::default();
    for (rung, &n) in ladder.iter().enumerate() {
        let system = QueueSystem::halfin_whitt(&s.classes, n)?;
        let policy = build_policy(
            config,
            config.policy.kind,
            &system,
            &s.cost,
            control.clone(),
        )?;
        let centre: Vec<f64> = system.rho().iter().map(|r| r * n as f64).collect();
        let scale = 1.0 / (n as f64).sqrt();
        let half_q = q as i32 / 2;
        let report = simulate_time_average(
            &system,
            &policy,
            &sim_config(config, Some(rung))?,
            |x, _| {
                let r2: f64 = x
                    .iter()
                    .zip(&centre)
                    .map(|(&xi, c)| {
                        let v = (xi as f64 - c) * scale;
                        v * v
                    })
                    .sum();
                r2.powi(half_q)
            },
        )?;
        check_invariants(&report, n, &mut outcome.flags);
        outcome.summary.push(format!(
            "n = {n}: E|X|^{q} = {:.6} ± {:.6}",
            report.estimate.mean, report.estimate.std_error
        ));
        rows.push(MomentRow {
            n,
            q,
            moment: report.estimate.mean,
            std_error: report.estimate.std_error,
        });
    }
    let sup = rows.iter().map(|r| r.moment).fold(0.0, f64::max);
    outcome.summary.push(format!("sup over ladder: {sup:.6}"));
    if rows.len() >= 2
        && rows.windows(2).all(|w| w[1].moment > w[0].moment)
        && rows[rows.len() - 1].moment > 2.0 * rows[0].moment
    {
        outcome
            .flags
            .push("moment estimates grow monotonically by more than 2x along the ladder".into());
    }
    write_csv(out.join("moments.csv"), &rows, &mut outcome.files)?;
    Ok(outcome)
}
