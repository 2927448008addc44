use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::QueueError;
use crate::model::{QueueSystem, RunningCost};
use crate::stats::{pool_batches, stream, BatchAccumulator, CostEstimate, StreamRole};

use super::policy::{AllocScratch, AllocationKind, SchedulingPolicy};

/// Simulation window and replication settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub replicas: usize,
    pub seed: u64,
    pub batches: usize,
    /// Initial head counts; defaults to `round(ρn)`.
    pub initial: Option<Vec<u64>>,
}

impl SimConfig {
    /// Burn-in defaults to 10% of the horizon, 20 batches per replica.
    pub fn new(horizon: f64, replicas: usize, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: 0.1 * horizon,
            replicas,
            seed,
            batches: 20,
            initial: None,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    fn validate(&self) -> Result<(), QueueError> {
        if !(self.burn_in > 0.0 && self.horizon > self.burn_in && self.horizon.is_finite()) {
            return Err(QueueError::Window {
                horizon: self.horizon,
                burn_in: self.burn_in,
            });
        }
        if self.replicas == 0 || self.batches == 0 {
            return Err(QueueError::NoReplicas);
        }
        Ok(())
    }
}

/// Outcome of a CTMC simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub estimate: CostEstimate,
    /// Allocations where the rounded split was not admissible.
    pub fallback_count: u64,
    pub events: u64,
    /// Transitions after which `Q ≥ 0`, `Z ≥ 0`, `e·Z = (e·X) ∧ n` failed.
    pub invariant_violations: u64,
}

/// Long-run average of `r(Q̂ⁿ)` with `Q̂ⁿ = Q/√n`.
pub fn simulate_ergodic_cost(
    system: &QueueSystem,
    policy: &SchedulingPolicy,
    cost: &RunningCost,
    config: &SimConfig,
) -> Result<SimReport, QueueError> {
    let scale = 1.0 / (system.servers() as f64).sqrt();
    let m = cost.exponent();
    let h = cost.weights();
    let zero = cost.is_zero();
    let power = |v: f64| {
        if m == 1.0 {
            v
        } else if m == 2.0 {
            v * v
        } else {
            v.powf(m)
        }
    };
    simulate_time_average(system, policy, config, |_, q| {
        if zero {
            return 0.0;
        }
        q.iter()
            .zip(h)
            .map(|(&qi, &w)| {
                if qi == 0 {
                    0.0
                } else {
                    w * power(qi as f64 * scale)
                }
            })
            .sum()
    })
}

/// Long-run average of an arbitrary observable `f(X, Q)` of the CTMC.
pub fn simulate_time_average<F>(
    system: &QueueSystem,
    policy: &SchedulingPolicy,
    config: &SimConfig,
    observable: F,
) -> Result<SimReport, QueueError>
where
    F: Fn(&[u64], &[u64]) -> f64 + Sync,
{
    config.validate()?;
    policy.validate(system.dim())?;
    let initial = match &config.initial {
        Some(x) if x.len() == system.dim() => x.clone(),
        Some(x) => {
            return Err(QueueError::Model(crate::error::ModelError::Dimension {
                expected: system.dim(),
                got: x.len(),
            }))
        }
        None => system
            .rho()
            .iter()
            .map(|r| (r * system.servers() as f64).round() as u64)
            .collect(),
    };
    let runs = (0..config.replicas)
        .into_par_iter()
        .map(|rep| run_replica(system, policy, config, &initial, rep, &observable))
        .collect::<Result<Vec<_>, _>>()?;

    let batches: Vec<Vec<f64>> = runs.iter().map(|r| r.batches.clone()).collect();
    Ok(SimReport {
        estimate: pool_batches(&batches, config.horizon, config.burn_in),
        fallback_count: runs.iter().map(|r| r.fallbacks).sum(),
        events: runs.iter().map(|r| r.events).sum(),
        invariant_violations: runs.iter().map(|r| r.violations).sum(),
    })
}

struct ReplicaRun {
    batches: Vec<f64>,
    fallbacks: u64,
    events: u64,
    violations: u64,
}

fn state_is_admissible(x: &[u64], z: &[u64], n: u64) -> bool {
    let total: u64 = x.iter().sum();
    let served: u64 = z.iter().sum();
    z.iter().zip(x).all(|(zi, xi)| zi <= xi) && served == total.min(n)
}

fn run_replica<F>(
    system: &QueueSystem,
    policy: &SchedulingPolicy,
    config: &SimConfig,
    initial: &[u64],
    replica: usize,
    observable: &F,
) -> Result<ReplicaRun, QueueError>
where
    F: Fn(&[u64], &[u64]) -> f64,
{
    let d = system.dim();
    let n = system.servers();
    let (lambda, mu, gamma) = (system.lambda(), system.mu(), system.gamma());
    let arrival_total: f64 = lambda.iter().sum();
    let mut clock = stream(config.seed, replica, StreamRole::Clock);
    let mut selector = stream(config.seed, replica, StreamRole::Selector);
    let mut acc = BatchAccumulator::new(config.burn_in, config.horizon, config.batches);
    let mut scratch = AllocScratch::new(d);

    let mut x = initial.to_vec();
    let mut z = vec![0u64; d];
    let mut q = vec![0u64; d];
    let mut fallbacks = 0;
    let mut events = 0;
    let mut violations = 0;

    let mut reallocate =
        |x: &[u64], z: &mut [u64], q: &mut [u64], fallbacks: &mut u64, violations: &mut u64| {
            if policy.allocate_into(x, system, z, &mut scratch) == AllocationKind::Fallback {
                *fallbacks += 1;
            }
            let ok = state_is_admissible(x, z, n);
            debug_assert!(ok, "inadmissible allocation {z:?} for {x:?}");
            if !ok {
                *violations += 1;
            }
            for i in 0..x.len() {
                q[i] = x[i].saturating_sub(z[i]);
            }
        };
    reallocate(&x, &mut z, &mut q, &mut fallbacks, &mut violations);

    let mut t = 0.0;
    while t < config.horizon {
        let mut total = arrival_total;
        for i in 0..d {
            total += mu[i] * z[i] as f64 + gamma[i] * q[i] as f64;
        }
        let dt = clock.sample::<f64, _>(Exp1) / total;
        let value = observable(&x, &q);
        acc.add(t, t + dt, value);
        t += dt;
        if t >= config.horizon {
            break;
        }

        let mut pick = selector.random::<f64>() * total;
        let mut fired = None;
        for i in 0..d {
            if pick < lambda[i] {
                fired = Some((i, true));
                break;
            }
            pick -= lambda[i];
        }
        if fired.is_none() {
            for i in 0..d {
                let s = mu[i] * z[i] as f64;
                if pick < s {
                    fired = Some((i, false));
                    break;
                }
                pick -= s;
                let a = gamma[i] * q[i] as f64;
                if pick < a {
                    fired = Some((i, false));
                    break;
                }
                pick -= a;
            }
        }
        // Rounding can leave `pick` marginally past the last bucket.
        let (class, arrival) = fired.unwrap_or_else(|| {
            (0..d)
                .rev()
                .find(|&i| x[i] > 0)
                .map(|i| (i, false))
                .unwrap_or((d - 1, true))
        });
        if arrival {
            x[class] = x[class]
                .checked_add(1)
                .ok_or(QueueError::Overflow { class })?;
        } else {
            x[class] -= 1;
        }
        events += 1;
        reallocate(&x, &mut z, &mut q, &mut fallbacks, &mut violations);
    }

    Ok(ReplicaRun {
        batches: acc.batch_means(),
        fallbacks,
        events,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm1() -> QueueSystem {
        QueueSystem::new(1, vec![0.5], vec![1.0], vec![1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_cost_is_exactly_zero() {
        let cost = RunningCost::zero(1);
        let r = simulate_ergodic_cost(
            &mm1(),
            &SchedulingPolicy::default_priority(1),
            &cost,
            &SimConfig::new(200.0, 2, 1),
        )
        .unwrap();
        assert_eq!(r.estimate.mean, 0.0);
        assert_eq!(r.estimate.std_error, 0.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let cfg = SimConfig::new(500.0, 3, 42);
        let p = SchedulingPolicy::default_priority(1);
        let a = simulate_ergodic_cost(&mm1(), &p, &cost, &cfg).unwrap();
        let b = simulate_ergodic_cost(&mm1(), &p, &cost, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimate.mean.to_bits(), b.estimate.mean.to_bits());
    }

    #[test]
    fn rejects_bad_window() {
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let cfg = SimConfig::new(10.0, 1, 0).with_burn_in(20.0);
        let err =
            simulate_ergodic_cost(&mm1(), &SchedulingPolicy::default_priority(1), &cost, &cfg)
                .unwrap_err();
        assert!(matches!(err, QueueError::Window { .. }));
    }

    #[test]
    fn birth_death_mean_queue() {
        // Death rate is k at every level, so X ~ Poisson(0.5) and
        // E[(X − 1)⁺] = 0.5 − (1 − e^{−0.5}).
        let expected = 0.5 - (1.0 - (-0.5f64).exp());
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let r = simulate_ergodic_cost(
            &mm1(),
            &SchedulingPolicy::default_priority(1),
            &cost,
            &SimConfig::new(2.0e4, 4, 9),
        )
        .unwrap();
        assert!(
            r.estimate.agrees_with(expected, 3.0),
            "{:?} vs {expected}",
            r.estimate
        );
        assert_eq!(r.invariant_violations, 0);
    }
}
