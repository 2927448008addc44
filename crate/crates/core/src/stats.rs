//! Time-average estimators with batch-means standard errors, and the
//! seeded stream layout shared by both simulators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Long-run average estimate from one or more replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub replicas: usize,
}

impl CostEstimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Integrates a piecewise-constant observable over `[burn_in, horizon]`
/// and splits the window into equal-length batches.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    start: f64,
    batch_len: f64,
    sums: Vec<f64>,
}

impl BatchAccumulator {
    pub fn new(burn_in: f64, horizon: f64, batches: usize) -> Self {
        Self {
            start: burn_in,
            batch_len: (horizon - burn_in) / batches as f64,
            sums: vec![0.0; batches],
        }
    }

    /// Adds `value` held constant on `[t0, t1)`.
    pub fn add(&mut self, t0: f64, t1: f64, value: f64) {
        let end = self.start + self.batch_len * self.sums.len() as f64;
        let mut a = t0.max(self.start);
        let b = t1.min(end);
        if a >= b || value == 0.0 {
            return;
        }
        while a < b {
            let k = (((a - self.start) / self.batch_len) as usize).min(self.sums.len() - 1);
            let batch_end = (self.start + self.batch_len * (k + 1) as f64).min(b);
            // Guard against a stall when `a` sits on a boundary up to rounding.
            let batch_end = if batch_end <= a {
                b.min(a + self.batch_len)
            } else {
                batch_end
            };
            self.sums[k] += value * (batch_end - a);
            a = batch_end;
        }
    }

    /// Adds a point sample weighted by `dt` at time `t` (for fixed-step schemes).
    pub fn add_sample(&mut self, t: f64, dt: f64, value: f64) {
        if t < self.start || value == 0.0 {
            return;
        }
        let k = ((t - self.start) / self.batch_len) as usize;
        if k < self.sums.len() {
            self.sums[k] += value * dt;
        }
    }

    pub fn batch_means(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.batch_len).collect()
    }
}

/// Pools batch means from all replicas into a mean and standard error.
pub fn pool_batches(batches: &[Vec<f64>], horizon: f64, burn_in: f64) -> CostEstimate {
    let all: Vec<f64> = batches.iter().flatten().copied().collect();
    let k = all.len() as f64;
    let mean = all.iter().sum::<f64>() / k;
    let std_error = if all.len() > 1 {
        let var = all.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    CostEstimate {
        mean,
        std_error,
        horizon,
        burn_in,
        replicas: batches.len(),
    }
}

/// Role of a random stream within one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    /// Holding times between events.
    Clock = 1,
    /// Which event fires.
    Selector = 2,
    /// Brownian increments.
    Noise = 3,
    /// Sampling of test points.
    Sampling = 4,
}

/// Independent ChaCha stream keyed by `(seed, replica, role)`.
pub fn stream(seed: u64, replica: usize, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replica as u64) << 8) | role as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn piecewise_integration_spans_batches() {
        let mut acc = BatchAccumulator::new(1.0, 5.0, 4);
        acc.add(0.0, 5.0, 2.0);
        assert_eq!(acc.batch_means(), vec![2.0; 4]);

        let mut acc = BatchAccumulator::new(0.0, 4.0, 4);
        acc.add(0.5, 2.5, 1.0);
        let b = acc.batch_means();
        assert_relative_eq!(b[0], 0.5);
        assert_relative_eq!(b[1], 1.0);
        assert_relative_eq!(b[2], 0.5);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn pooled_error_of_constant_is_zero() {
        let est = pool_batches(&[vec![3.0; 5], vec![3.0; 5]], 10.0, 1.0);
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.replicas, 2);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream(7, 0, StreamRole::Clock).random();
        let b: u64 = stream(7, 0, StreamRole::Selector).random();
        let c: u64 = stream(7, 1, StreamRole::Clock).random();
        let a2: u64 = stream(7, 0, StreamRole::Clock).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, a2);
    }
}
