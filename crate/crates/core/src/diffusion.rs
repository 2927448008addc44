//! Euler–Maruyama estimates of the ergodic cost of the limiting diffusion
//! `dX = b(X, u(X))dt + Σ dW` under a Markov control.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::SimulationError;
use crate::model::{DiffusionModel, MarkovControl, RunningCost};
use crate::stats::{pool_batches, stream, BatchAccumulator, CostEstimate, StreamRole};

/// Step size, window and replication settings for path simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub replicas: usize,
    pub seed: u64,
    pub batches: usize,
    /// A replica aborts once `|X|` exceeds this radius.
    pub guard_radius: f64,
    pub initial: Option<Vec<f64>>,
}

impl SdePathConfig {
    /// Burn-in 10% of the horizon, 20 batches per replica, no guard.
    pub fn new(dt: f64, horizon: f64, replicas: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            burn_in: 0.1 * horizon,
            replicas,
            seed,
            batches: 20,
            guard_radius: f64::INFINITY,
            initial: None,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    /// Guard at `10·L` for a control field on a box of half-width `L`.
    pub fn with_guard_radius(mut self, radius: f64) -> Self {
        self.guard_radius = radius;
        self
    }

    fn validate(&self, d: usize) -> Result<(), SimulationError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimulationError::Config(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.burn_in >= 0.0 && self.horizon > self.burn_in && self.horizon.is_finite()) {
            return Err(SimulationError::Config(format!(
                "need 0 <= burn_in ({}) < horizon ({})",
                self.burn_in, self.horizon
            )));
        }
        if self.replicas == 0 || self.batches == 0 {
            return Err(SimulationError::Config(
                "replicas and batches must be positive".into(),
            ));
        }
        if !(self.guard_radius > 0.0) {
            return Err(SimulationError::Config(format!(
                "guard radius {} must be positive",
                self.guard_radius
            )));
        }
        if let Some(x) = &self.initial {
            if x.len() != d {
                return Err(SimulationError::Config(format!(
                    "initial state has dimension {}, expected {d}",
                    x.len()
                )));
            }
        }
        Ok(())
    }
}

/// Time average of `r̃(X, u(X))` over `[burn_in, horizon]`, pooled over
/// replicas with batch-means standard errors.
pub fn simulate_diffusion_cost(
    model: &DiffusionModel,
    cost: &RunningCost,
    control: &dyn MarkovControl,
    config: &SdePathConfig,
) -> Result<CostEstimate, SimulationError> {
    let d = model.dim();
    config.validate(d)?;
    if control.dim() != d || cost.dim() != d {
        return Err(SimulationError::Config(format!(
            "control dimension {} and cost dimension {} must equal {d}",
            control.dim(),
            cost.dim()
        )));
    }
    let batches = (0..config.replicas)
        .into_par_iter()
        .map(|rep| run_path(model, cost, control, config, rep))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pool_batches(&batches, config.horizon, config.burn_in))
}

fn run_path(
    model: &DiffusionModel,
    cost: &RunningCost,
    control: &dyn MarkovControl,
    config: &SdePathConfig,
    replica: usize,
) -> Result<Vec<f64>, SimulationError> {
    let d = model.dim();
    let mut noise = stream(config.seed, replica, StreamRole::Noise);
    let mut acc = BatchAccumulator::new(config.burn_in, config.horizon, config.batches);
    let scale: Vec<f64> = model.sigma().iter().map(|s| s * config.dt.sqrt()).collect();
    let mut x = config.initial.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut u = vec![0.0; d];
    let mut b = vec![0.0; d];
    let guard2 = config.guard_radius * config.guard_radius;
    let steps = (config.horizon / config.dt).ceil() as u64;
    let skip_cost = cost.is_zero();
    for k in 0..steps {
        let t = k as f64 * config.dt;
        control.control_into(&x, &mut u);
        if !skip_cost {
            acc.add_sample(t, config.dt, cost.running_cost(&x, &u));
        }
        model.drift_into(&x, &u, &mut b);
        let mut norm2 = 0.0;
        for i in 0..d {
            let xi: f64 = noise.sample(StandardNormal);
            x[i] += b[i] * config.dt + scale[i] * xi;
            norm2 += x[i] * x[i];
        }
        if !(norm2 <= guard2) {
            return Err(SimulationError::Diverged {
                replica,
                time: t + config.dt,
                norm: norm2.sqrt(),
                limit: config.guard_radius,
            });
        }
    }
    Ok(acc.batch_means())
}
