//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! lambda = [0.5, 1.0]
//! mu = [1.0, 2.0]
//! gamma = [1.0, 1.0]
//!
//! [cost]
//! m = 1.0
//! h = [1.0, 3.0]
//!
//! [grid]
//! L = 5.0
//! h = 0.1
//!
//! [sim]
//! n = 100
//! horizon = 1e4
//! seed = 1
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hjb::{DriftScheme, Grid, SolverOptions, TruncationConfig};
use crate::model::{ClassParams, RunningCost, SimplexControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    SolveHjb,
    SimulateQueue,
    SimulateDiffusion,
    Convergence,
    TruncationSweep,
    EpsilonBound,
    VanishingDiscount,
    LyapunovCheck,
    MomentCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::SolveHjb,
        Self::SimulateQueue,
        Self::SimulateDiffusion,
        Self::Convergence,
        Self::TruncationSweep,
        Self::EpsilonBound,
        Self::VanishingDiscount,
        Self::LyapunovCheck,
        Self::MomentCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SolveHjb => "solve-hjb",
            Self::SimulateQueue => "simulate-queue",
            Self::SimulateDiffusion => "simulate-diffusion",
            Self::Convergence => "convergence",
            Self::TruncationSweep => "truncation-sweep",
            Self::EpsilonBound => "epsilon-bound",
            Self::VanishingDiscount => "vanishing-discount",
            Self::LyapunovCheck => "lyapunov-check",
            Self::MomentCheck => "moment-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Optional; checked against the vector lengths when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_hat: Option<Vec<f64>>,
}

impl ModelSection {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn classes(&self) -> Result<Vec<ClassParams>> {
        let d = self.dim();
        let lengths = [
            Some(self.mu.len()),
            Some(self.gamma.len()),
            self.lambda_hat.as_ref().map(Vec::len),
            self.mu_hat.as_ref().map(Vec::len),
            self.d,
        ];
        if d == 0 || lengths.iter().flatten().any(|&l| l != d) {
            return Err(Error::Config(format!(
                "model vectors must all have length d = {d} > 0"
            )));
        }
        Ok((0..d)
            .map(|i| {
                ClassParams::new(self.lambda[i], self.mu[i], self.gamma[i]).with_second_order(
                    self.lambda_hat.as_ref().map_or(0.0, |v| v[i]),
                    self.mu_hat.as_ref().map_or(0.0, |v| v[i]),
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "one")]
    pub m: f64,
    pub h: Vec<f64>,
}

impl CostSection {
    pub fn build(&self) -> Result<RunningCost> {
        Ok(RunningCost::new(self.m, self.h.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncSection {
    /// Radius of the ball outside which the control is frozen; none by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    /// Frozen control; `e_d` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    Upwind,
    Central,
}

impl From<SchemeName> for DriftScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Upwind => DriftScheme::Upwind,
            SchemeName::Central => DriftScheme::CentralWhereMonotone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "yes")]
    pub multilevel: bool,
    /// Perturbation sizes for `epsilon-bound`.
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    /// Discount rates for `vanishing-discount`.
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    /// Radii for `truncation-sweep`; `1, 2, …, ⌊L⌋` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_values: Option<Vec<f64>>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: default_max_iters(),
            scheme: SchemeName::default(),
            multilevel: true,
            epsilon: default_epsilon(),
            alpha: default_alpha(),
            l_values: None,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            scheme: self.scheme.into(),
            multilevel: self.multilevel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    pub horizon: f64,
    /// 10% of the horizon by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<u64>,
    /// Per-rung horizons overriding `horizon`, same length as `ladder`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder_horizons: Option<Vec<f64>>,
}

impl SimSection {
    pub fn horizon_for(&self, rung: usize) -> f64 {
        self.ladder_horizons
            .as_ref()
            .and_then(|h| h.get(rung).copied())
            .unwrap_or(self.horizon)
    }

    /// Burn-in for a given horizon: the configured value if set, else 10%.
    pub fn burn_in_for(&self, horizon: f64) -> f64 {
        match (self.burn_in, &self.ladder_horizons) {
            (Some(b), None) => b,
            _ => 0.1 * horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    StaticPriority,
    CmuTheta,
    #[default]
    MarkovRounded,
    FixedFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default)]
    pub kind: PolicyKind,
    /// Radius constant of the region `A_n`.
    #[serde(rename = "K", default = "default_k")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
    /// Split for `fixed-fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyKind::default(),
            k: default_k(),
            order: None,
            u: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Even moment order for `moment-check`.
    #[serde(default = "default_q")]
    pub q: u32,
    /// Sample count for `lyapunov-check`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Sphere directions used to build the certificate.
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Radius of the compact set in `vanishing-discount`.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Slack added to the upper ε-bound.
    #[serde(default = "default_eps_slack")]
    pub epsilon_slack: f64,
    /// Monotonicity tolerance of the truncation sweep.
    #[serde(default = "default_mono_tol")]
    pub monotone_tol: f64,
    /// Run static priority alongside the rounded policy in `convergence`.
    #[serde(default = "yes")]
    pub compare_priority: bool,
    /// Standard errors allowed in agreement checks.
    #[serde(default = "default_k_se")]
    pub std_errors: f64,
    /// Seed for certificate sampling and the drift check.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            q: default_q(),
            samples: default_samples(),
            directions: default_directions(),
            radius: default_radius(),
            epsilon_slack: default_eps_slack(),
            monotone_tol: default_mono_tol(),
            compare_priority: true,
            std_errors: default_k_se(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub cost: CostSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub trunc: TruncSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    /// Canonical TOML rendering (defaults filled in).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(sim) = &mut self.sim {
            sim.seed = seed;
        }
        if let Some(sde) = &mut self.sde {
            sde.seed = seed;
        }
        self.experiment.seed = seed;
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = self.require_grid()?;
        Ok(Grid::uniform(self.dim(), g.half_width, g.h)?)
    }

    fn require_grid(&self) -> Result<&GridSection> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::Config("missing [grid] section".into()))
    }

    pub fn sim(&self) -> Result<&SimSection> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sim] section".into()))
    }

    pub fn sde(&self) -> Result<&SdeSection> {
        self.sde
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sde] section".into()))
    }

    pub fn frozen_control(&self) -> Result<SimplexControl> {
        match &self.trunc.u0 {
            Some(u) if u.len() == self.dim() => Ok(SimplexControl::new(u.clone())?),
            Some(u) => Err(Error::Config(format!(
                "trunc.u0 has length {}, expected {}",
                u.len(),
                self.dim()
            ))),
            None => Ok(SimplexControl::last_vertex(self.dim())),
        }
    }

    pub fn truncation(&self) -> Result<TruncationConfig> {
        let u0 = self.frozen_control()?;
        match self.trunc.l {
            Some(l) if l > 0.0 => Ok(TruncationConfig::new(l, u0)),
            Some(l) => Err(Error::Config(format!("trunc.l = {l} must be positive"))),
            None => Ok(TruncationConfig::new(f64::INFINITY, u0)),
        }
    }

    /// Radii for the truncation sweep.
    pub fn l_values(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.solver.l_values {
            return Ok(v.clone());
        }
        let l = self.require_grid()?.half_width.floor() as usize;
        Ok((1..=l.max(1)).map(|v| v as f64).collect())
    }

    /// Checks that every section used by `kind` is present and consistent.
    pub fn validate_for(&self, kind: ExperimentKind) -> Result<()> {
        self.model.classes()?;
        let cost = self.cost.build()?;
        if cost.dim() != self.dim() {
            return Err(Error::Config(format!(
                "cost.h has length {}, expected {}",
                cost.dim(),
                self.dim()
            )));
        }
        self.truncation()?;
        use ExperimentKind::*;
        let needs_grid = !matches!(kind, LyapunovCheck)
            && !(kind == SimulateQueue && self.policy.kind != PolicyKind::MarkovRounded)
            && !(kind == MomentCheck && self.policy.kind != PolicyKind::MarkovRounded);
        if needs_grid {
            self.grid()?;
        }
        if matches!(kind, SimulateQueue | Convergence | MomentCheck) {
            let sim = self.sim()?;
            if kind == SimulateQueue && sim.n.is_none() {
                return Err(Error::Config("simulate-queue needs sim.n".into()));
            }
            if kind != SimulateQueue && sim.ladder.is_empty() {
                return Err(Error::Config("sim.ladder must not be empty".into()));
            }
            if let Some(h) = &sim.ladder_horizons {
                if h.len() != sim.ladder.len() {
                    return Err(Error::Config(
                        "sim.ladder_horizons must match sim.ladder".into(),
                    ));
                }
            }
        }
        if kind == SimulateDiffusion {
            self.sde()?;
        }
        if kind == MomentCheck && (self.experiment.q == 0 || self.experiment.q % 2 != 0) {
            return Err(Error::Config(format!(
                "moment order q = {} must be a positive even integer",
                self.experiment.q
            )));
        }
        if kind == EpsilonBound && self.solver.epsilon.is_empty() {
            return Err(Error::Config("solver.epsilon must not be empty".into()));
        }
        if kind == VanishingDiscount && self.solver.alpha.is_empty() {
            return Err(Error::Config("solver.alpha must not be empty".into()));
        }
        Ok(())
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    5_000_000
}
fn default_epsilon() -> Vec<f64> {
    vec![0.1, 0.01]
}
fn default_alpha() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}
fn default_batches() -> usize {
    20
}
fn default_ladder() -> Vec<u64> {
    vec![10, 50, 200, 800]
}
fn default_k() -> f64 {
    10.0
}
fn default_q() -> u32 {
    2
}
fn default_samples() -> usize {
    10_000
}
fn default_directions() -> usize {
    20_000
}
fn default_radius() -> f64 {
    3.0
}
fn default_eps_slack() -> f64 {
    1e-6
}
fn default_mono_tol() -> f64 {
    1e-4
}
fn default_k_se() -> f64 {
    3.0
}
fn default_seed() -> u64 {
    1
}
