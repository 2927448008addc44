use std::collections::HashMap;

use crate::error::QueueError;
use crate::model::{QueueSystem, RunningCost};

use super::policy::{AllocScratch, SchedulingPolicy};

/// Upper bound on the number of enumerated states.
pub const MAX_STATES: usize = 5_000_000;

const RESIDUAL_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 2_000_000;

/// Stationary law of the policy-induced CTMC on `{x : e·x ≤ cap}`.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    states: Vec<Vec<u64>>,
    queues: Vec<Vec<u64>>,
    /// Outgoing `(target, rate)` per state; out-of-cap arrivals are dropped.
    transitions: Vec<Vec<(usize, f64)>>,
}

fn count_states(d: usize, cap: u64) -> Option<usize> {
    // C(cap + d, d)
    let mut c: u128 = 1;
    for k in 1..=d as u128 {
        c = c * (cap as u128 + k) / k;
        if c > usize::MAX as u128 {
            return None;
        }
    }
    Some(c as usize)
}

impl TruncatedChain {
    pub fn build(
        system: &QueueSystem,
        policy: &SchedulingPolicy,
        cap: u64,
    ) -> Result<Self, QueueError> {
        policy.validate(system.dim())?;
        let d = system.dim();
        let states_needed = count_states(d, cap).unwrap_or(usize::MAX);
        if states_needed > MAX_STATES {
            return Err(QueueError::StateSpaceTooLarge {
                states: states_needed,
                limit: MAX_STATES,
            });
        }

        let mut states = Vec::with_capacity(states_needed);
        let mut x = vec![0u64; d];
        enumerate(&mut x, 0, cap, &mut states);
        let index: HashMap<Vec<u64>, usize> = states
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();

        let mut scratch = AllocScratch::new(d);
        let mut z = vec![0u64; d];
        let mut queues = Vec::with_capacity(states.len());
        let mut transitions = Vec::with_capacity(states.len());
        let mut next = vec![0u64; d];
        for s in &states {
            policy.allocate_into(s, system, &mut z, &mut scratch);
            let q: Vec<u64> = s.iter().zip(&z).map(|(x, z)| x - z).collect();
            let mut out = Vec::with_capacity(2 * d);
            let total: u64 = s.iter().sum();
            for i in 0..d {
                if total < cap {
                    next.copy_from_slice(s);
                    next[i] += 1;
                    out.push((index[&next], system.lambda()[i]));
                }
                let departure = system.mu()[i] * z[i] as f64 + system.gamma()[i] * q[i] as f64;
                if departure > 0.0 {
                    next.copy_from_slice(s);
                    next[i] -= 1;
                    out.push((index[&next], departure));
                }
            }
            queues.push(q);
            transitions.push(out);
        }
        Ok(Self {
            states,
            queues,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<u64>] {
        &self.states
    }

    /// Power iteration on the uniformized chain until `‖πP − π‖₁ < 1e-12`.
    pub fn stationary(&self) -> Result<Vec<f64>, QueueError> {
        let out_rate: Vec<f64> = self
            .transitions
            .iter()
            .map(|t| t.iter().map(|(_, r)| r).sum())
            .collect();
        // A strictly larger uniformization rate leaves a self-loop everywhere.
        let unif = 1.05 * out_rate.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let n = self.len();
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            for (j, p) in next.iter_mut().enumerate() {
                *p = pi[j] * (1.0 - out_rate[j] / unif);
            }
            for (j, out) in self.transitions.iter().enumerate() {
                let mass = pi[j] / unif;
                for &(k, r) in out {
                    next[k] += mass * r;
                }
            }
            let total: f64 = next.iter().sum();
            residual = 0.0;
            for (p, q) in pi.iter_mut().zip(next.iter()) {
                let v = q / total;
                residual += (v - *p).abs();
                *p = v;
            }
            if residual < RESIDUAL_TOL {
                return Ok(pi);
            }
            if !residual.is_finite() {
                break;
            }
        }
        Err(QueueError::NotConverged {
            residual,
            iterations: MAX_ITERATIONS,
        })
    }

    /// `Σ π(x) f(x, Q[x])`.
    pub fn expectation<F: Fn(&[u64], &[u64]) -> f64>(&self, pi: &[f64], f: F) -> f64 {
        self.states
            .iter()
            .zip(&self.queues)
            .zip(pi)
            .map(|((x, q), p)| p * f(x, q))
            .sum()
    }
}

fn enumerate(x: &mut Vec<u64>, i: usize, remaining: u64, out: &mut Vec<Vec<u64>>) {
    if i == x.len() {
        out.push(x.clone());
        return;
    }
    for v in 0..=remaining {
        x[i] = v;
        enumerate(x, i + 1, remaining - v, out);
    }
    x[i] = 0;
}

/// Exact stationary cost `Σ π(x) r(Q[x]/√n)` of the truncated chain.
pub fn exact_stationary_cost(
    system: &QueueSystem,
    policy: &SchedulingPolicy,
    cost: &RunningCost,
    cap: u64,
) -> Result<f64, QueueError> {
    let chain = TruncatedChain::build(system, policy, cap)?;
    if cost.is_zero() {
        return Ok(0.0);
    }
    let pi = chain.stationary()?;
    let scale = 1.0 / (system.servers() as f64).sqrt();
    Ok(chain.expectation(&pi, |_, q| {
        let qs: Vec<f64> = q.iter().map(|&v| v as f64 * scale).collect();
        cost.eval(&qs)
    }))
}
