use std::fmt;
use std::sync::Arc;

use crate::error::QueueError;
use crate::model::{MarkovControl, QueueSystem, RunningCost, SimplexControl};

use super::varpi::varpi_into;

/// Work-conserving preemptive scheduling rule for the prelimit system.
#[derive(Clone)]
pub enum SchedulingPolicy {
    /// Fixed priority; `order[0]` is served first.
    StaticPriority { order: Vec<usize> },
    /// Static priority by decreasing `hᵢμᵢ/γᵢ`.
    CmuTheta { order: Vec<usize> },
    /// Lift of a diffusion control: on `A_n` the queue is split as
    /// `ϖ((e·x − n)⁺ v(x̂))`, elsewhere static priority with class d last.
    MarkovRounded {
        control: Arc<dyn MarkovControl>,
        radius: f64,
    },
    /// Queue split `ϖ((e·x − n)⁺ u)` for a fixed `u ∈ S`.
    FixedFraction { u: SimplexControl },
}

impl fmt::Debug for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StaticPriority { order } => f
                .debug_struct("StaticPriority")
                .field("order", order)
                .finish(),
            Self::CmuTheta { order } => f.debug_struct("CmuTheta").field("order", order).finish(),
            Self::MarkovRounded { radius, .. } => f
                .debug_struct("MarkovRounded")
                .field("radius", radius)
                .finish_non_exhaustive(),
            Self::FixedFraction { u } => f.debug_struct("FixedFraction").field("u", u).finish(),
        }
    }
}

/// Result of one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationKind {
    Direct,
    /// The rounded split would have put more of a class in queue than is
    /// present; static priority was used instead.
    Fallback,
}

impl SchedulingPolicy {
    /// Static priority with class 1 first and class d last.
    pub fn default_priority(d: usize) -> Self {
        Self::StaticPriority {
            order: (0..d).collect(),
        }
    }

    pub fn static_priority(order: Vec<usize>) -> Result<Self, QueueError> {
        check_permutation(&order)?;
        Ok(Self::StaticPriority { order })
    }

    pub fn cmu_theta(cost: &RunningCost, system: &QueueSystem) -> Self {
        let index: Vec<f64> = (0..system.dim())
            .map(|i| cost.weights()[i] * system.mu()[i] / system.gamma()[i])
            .collect();
        let mut order: Vec<usize> = (0..system.dim()).collect();
        // Stable sort keeps the lower class index first on ties.
        order.sort_by(|&a, &b| index[b].total_cmp(&index[a]));
        Self::CmuTheta { order }
    }

    pub fn markov_rounded(
        control: Arc<dyn MarkovControl>,
        radius: f64,
    ) -> Result<Self, QueueError> {
        if !(radius > 0.0) {
            return Err(QueueError::Policy(format!(
                "radius K = {radius} must be positive"
            )));
        }
        Ok(Self::MarkovRounded { control, radius })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::StaticPriority { .. } => "static-priority",
            Self::CmuTheta { .. } => "cmu-theta",
            Self::MarkovRounded { .. } => "markov-rounded",
            Self::FixedFraction { .. } => "fixed-fraction",
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), QueueError> {
        match self {
            Self::StaticPriority { order } | Self::CmuTheta { order } => {
                if order.len() != d {
                    return Err(QueueError::Policy(format!(
                        "priority order has {} entries, expected {d}",
                        order.len()
                    )));
                }
                check_permutation(order)
            }
            Self::MarkovRounded { control, .. } => {
                if control.dim() != d {
                    return Err(QueueError::Policy(format!(
                        "control has dimension {}, expected {d}",
                        control.dim()
                    )));
                }
                Ok(())
            }
            Self::FixedFraction { u } => {
                if u.dim() != d {
                    return Err(QueueError::Policy(format!(
                        "fraction has dimension {}, expected {d}",
                        u.dim()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn allocate(&self, x: &[u64], system: &QueueSystem) -> (Vec<u64>, AllocationKind) {
        let mut scratch = AllocScratch::new(x.len());
        let mut z = vec![0; x.len()];
        let kind = self.allocate_into(x, system, &mut z, &mut scratch);
        (z, kind)
    }

    /// Writes a work-conserving allocation `Z ∈ Aⁿ(x)` into `z`.
    pub fn allocate_into(
        &self,
        x: &[u64],
        system: &QueueSystem,
        z: &mut [u64],
        scratch: &mut AllocScratch,
    ) -> AllocationKind {
        let n = system.servers();
        let total: u64 = x.iter().sum();
        if total <= n {
            z.copy_from_slice(x);
            return AllocationKind::Direct;
        }
        match self {
            Self::StaticPriority { order } | Self::CmuTheta { order } => {
                priority_into(x, n, order.iter().copied(), z);
                AllocationKind::Direct
            }
            Self::MarkovRounded { control, radius } => {
                let nf = n as f64;
                let bound = radius * nf.sqrt();
                let inside = x
                    .iter()
                    .zip(system.rho())
                    .all(|(&xi, &r)| (xi as f64 - r * nf).abs() <= bound);
                if !inside {
                    priority_into(x, n, 0..x.len(), z);
                    return AllocationKind::Direct;
                }
                for (s, (&xi, &r)) in scratch.xhat.iter_mut().zip(x.iter().zip(system.rho())) {
                    *s = (xi as f64 - r * nf) / nf.sqrt();
                }
                control.control_into(&scratch.xhat, &mut scratch.u);
                rounded_split(
                    x,
                    n,
                    total,
                    &scratch.u,
                    z,
                    &mut scratch.split,
                    &mut scratch.queue,
                )
            }
            Self::FixedFraction { u } => rounded_split(
                x,
                n,
                total,
                u.as_slice(),
                z,
                &mut scratch.split,
                &mut scratch.queue,
            ),
        }
    }
}

/// Reusable buffers for [`SchedulingPolicy::allocate_into`].
#[derive(Debug, Clone)]
pub struct AllocScratch {
    xhat: Vec<f64>,
    u: Vec<f64>,
    split: Vec<f64>,
    queue: Vec<u64>,
}

impl AllocScratch {
    pub fn new(d: usize) -> Self {
        Self {
            xhat: vec![0.0; d],
            u: vec![0.0; d],
            split: vec![0.0; d],
            queue: vec![0; d],
        }
    }
}

fn rounded_split(
    x: &[u64],
    n: u64,
    total: u64,
    u: &[f64],
    z: &mut [u64],
    split: &mut [f64],
    queue: &mut [u64],
) -> AllocationKind {
    let excess = (total - n) as f64;
    for (s, &ui) in split.iter_mut().zip(u) {
        *s = excess * ui;
    }
    let ok = varpi_into(split, queue).is_ok() && queue.iter().zip(x).all(|(q, xi)| q <= xi);
    if ok {
        for ((zi, &xi), &qi) in z.iter_mut().zip(x).zip(queue.iter()) {
            *zi = xi - qi;
        }
        AllocationKind::Direct
    } else {
        priority_into(x, n, 0..x.len(), z);
        AllocationKind::Fallback
    }
}

/// `Zᵢ = Xᵢ ∧ (n − Σ_{j before i} Xⱼ)⁺` along `order`.
fn priority_into(x: &[u64], n: u64, order: impl Iterator<Item = usize>, z: &mut [u64]) {
    let mut free = n;
    for i in order {
        let take = x[i].min(free);
        z[i] = take;
        free -= take;
    }
}

fn check_permutation(order: &[usize]) -> Result<(), QueueError> {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || std::mem::replace(&mut seen[i], true) {
            return Err(QueueError::Policy(format!(
                "{order:?} is not a permutation"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantControl;

    fn system(n: u64, rho: Vec<f64>) -> QueueSystem {
        let d = rho.len();
        QueueSystem::new(n, vec![1.0; d], vec![1.0; d], vec![1.0; d], rho).unwrap()
    }

    #[test]
    fn static_priority_example() {
        let sys = system(5, vec![0.5, 0.5]);
        let (z, _) = SchedulingPolicy::default_priority(2).allocate(&[3, 4], &sys);
        assert_eq!(z, vec![3, 2]);
    }

    #[test]
    fn markov_rounded_example() {
        let sys = system(100, vec![0.5, 0.5]);
        let control = Arc::new(ConstantControl(SimplexControl::uniform(2)));
        let policy = SchedulingPolicy::markov_rounded(control, 2.0).unwrap();
        let (z, kind) = policy.allocate(&[55, 52], &sys);
        assert_eq!(z, vec![52, 48]);
        assert_eq!(kind, AllocationKind::Direct);
    }

    #[test]
    fn underloaded_state_is_fully_served() {
        let sys = system(10, vec![0.5, 0.5]);
        let policies = [
            SchedulingPolicy::default_priority(2),
            SchedulingPolicy::FixedFraction {
                u: SimplexControl::uniform(2),
            },
            SchedulingPolicy::markov_rounded(
                Arc::new(ConstantControl(SimplexControl::uniform(2))),
                10.0,
            )
            .unwrap(),
        ];
        for p in &policies {
            assert_eq!(p.allocate(&[4, 6], &sys).0, vec![4, 6]);
        }
    }

    #[test]
    fn rounded_split_falls_back_when_queue_exceeds_class() {
        let sys = system(4, vec![0.5, 0.5]);
        // excess 2 split (1,1), but class 0 has none
        let p = SchedulingPolicy::FixedFraction {
            u: SimplexControl::uniform(2),
        };
        let (z, kind) = p.allocate(&[0, 6], &sys);
        assert_eq!(kind, AllocationKind::Fallback);
        assert_eq!(z, vec![0, 4]);
    }

    #[test]
    fn outside_region_uses_priority_with_last_class_last() {
        let sys = system(100, vec![0.5, 0.5]);
        let control = Arc::new(ConstantControl(SimplexControl::vertex(2, 0)));
        let p = SchedulingPolicy::markov_rounded(control, 1.0).unwrap();
        let (z, _) = p.allocate(&[80, 40], &sys);
        assert_eq!(z, vec![80, 20]);
    }

    #[test]
    fn cmu_theta_orders_by_index() {
        let sys = QueueSystem::new(
            10,
            vec![1.0, 1.0],
            vec![1.0, 3.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        let cost = RunningCost::linear(vec![1.0, 1.0]).unwrap();
        match SchedulingPolicy::cmu_theta(&cost, &sys) {
            SchedulingPolicy::CmuTheta { order } => assert_eq!(order, vec![1, 0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_order() {
        assert!(SchedulingPolicy::static_priority(vec![0, 0]).is_err());
        assert!(SchedulingPolicy::static_priority(vec![1, 0]).is_ok());
    }
}
