use crate::model::{positive_part_sum, DiffusionModel, RunningCost, SimplexControl};

const BISECTION_TOL: f64 = 1e-10;

/// Minimizes `b(x,u)·p + r̃(x,u)` over the simplex.
///
/// With `q = (e·x)⁺` the objective is
/// `ℓ·p − (Rx)·p + q Σ (μᵢ − γᵢ) pᵢ uᵢ + qᵐ Σ hᵢ uᵢᵐ`. It is linear in `u`
/// for `m = 1` (a vertex is optimal, ties go to the largest index) and
/// strictly convex for `m > 1`, where the KKT point is found by bisection
/// on the multiplier.
pub fn minimize_hamiltonian(
    model: &DiffusionModel,
    cost: &RunningCost,
    x: &[f64],
    p: &[f64],
) -> (SimplexControl, f64) {
    let d = model.dim();
    let mu = model.service_rates();
    let gamma = model.abandonment_rates();
    let base: f64 = (0..d).map(|i| (model.ell()[i] - mu[i] * x[i]) * p[i]).sum();
    let q = positive_part_sum(x);
    if q == 0.0 {
        return (SimplexControl::last_vertex(d), base);
    }
    let linear: Vec<f64> = (0..d).map(|i| q * (mu[i] - gamma[i]) * p[i]).collect();
    let m = cost.exponent();
    let h = cost.weights();

    if m == 1.0 {
        let coeff: Vec<f64> = (0..d).map(|i| linear[i] + q * h[i]).collect();
        let best = argmin_last(&coeff);
        return (SimplexControl::vertex(d, best), base + coeff[best]);
    }

    let scale = q.powf(m);
    let weights: Vec<f64> = h.iter().map(|w| w * scale).collect();
    let u = kkt_simplex(&linear, &weights, m);
    let value = base
        + (0..d)
            .map(|i| linear[i] * u[i] + weights[i] * u[i].powf(m))
            .sum::<f64>();
    (
        SimplexControl::new(u).expect("KKT point is normalized"),
        value,
    )
}

/// Index of the smallest entry, preferring the largest index on ties.
pub(crate) fn argmin_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v <= values[best] {
            best = i;
        }
    }
    best
}

/// Minimizes `Σ aᵢuᵢ + wᵢuᵢᵐ` over the simplex for `m > 1`, `wᵢ ≥ 0`.
///
/// Stationarity gives `uᵢ(τ) = ((τ − aᵢ)⁺ / (m wᵢ))^{1/(m−1)}`; `τ` is
/// found by bisection on `Σ uᵢ(τ) = 1`. Classes with `wᵢ = 0` cap `τ` at
/// their linear price and absorb any leftover mass.
fn kkt_simplex(a: &[f64], w: &[f64], m: f64) -> Vec<f64> {
    let d = a.len();
    let expo = 1.0 / (m - 1.0);
    let share = |tau: f64, i: usize| -> f64 {
        if w[i] > 0.0 && tau > a[i] {
            ((tau - a[i]) / (m * w[i])).powf(expo)
        } else {
            0.0
        }
    };
    let total = |tau: f64| (0..d).map(|i| share(tau, i)).sum::<f64>();

    // Cheapest class with no curvature, ties to the largest index.
    let flat = (0..d)
        .filter(|&i| w[i] == 0.0)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if a[b] < a[i] => Some(b),
            _ => Some(i),
        });
    if let Some(j) = flat {
        let cap = a[j];
        if total(cap) <= 1.0 {
            let mut u: Vec<f64> = (0..d).map(|i| share(cap, i)).collect();
            u[j] += 1.0 - total(cap);
            return u;
        }
    }

    let mut lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut step = 1.0;
    let mut hi = lo + step;
    while total(hi) < 1.0 {
        step *= 2.0;
        hi = lo + step;
    }
    while hi - lo > BISECTION_TOL * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u: Vec<f64> = (0..d).map(|i| share(hi, i)).collect();
    let s: f64 = u.iter().sum();
    for v in &mut u {
        *v /= s;
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_limit_model, ClassParams};

    fn model() -> DiffusionModel {
        build_limit_model(&[
            ClassParams::new(0.5, 1.0, 1.0),
            ClassParams::new(1.0, 2.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn empty_queue_returns_last_vertex() {
        let m = model();
        let cost = RunningCost::linear(vec![1.0, 1.0]).unwrap();
        let x = [-1.0, 0.5];
        let p = [0.3, -2.0];
        let (u, v) = minimize_hamiltonian(&m, &cost, &x, &p);
        assert_eq!(u.as_slice(), &[0.0, 1.0]);
        // ℓ·p − (Rx)·p = −(1·(−1)·0.3 + 2·0.5·(−2))
        assert!((v - 2.3).abs() < 1e-12);
    }

    #[test]
    fn vertex_rule_example() {
        let m = model();
        let cost = RunningCost::linear(vec![1.0, 1.0]).unwrap();
        let (u, _) = minimize_hamiltonian(&m, &cost, &[1.0, 1.0], &[0.0, 1.0]);
        assert_eq!(u.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn ties_go_to_last_class() {
        assert_eq!(argmin_last(&[1.0, 1.0, 2.0]), 1);
        assert_eq!(argmin_last(&[0.0, 1.0, 0.0]), 2);
    }

    #[test]
    fn kkt_interior_two_classes() {
        // a = (0, 0), w = (1, 1), m = 2 → u = (1/2, 1/2)
        let u = kkt_simplex(&[0.0, 0.0], &[1.0, 1.0], 2.0);
        assert!((u[0] - 0.5).abs() < 1e-9);
        // a = (0, 1), w = (1, 1): 2u₁ = 1 + 2u₂ → u₁ = 3/4
        let u = kkt_simplex(&[0.0, 1.0], &[1.0, 1.0], 2.0);
        assert!((u[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn kkt_with_flat_class() {
        // class 1 costs nothing extra: mass goes there once class 0's marginal exceeds 0.5
        let u = kkt_simplex(&[0.0, 0.5], &[1.0, 0.0], 2.0);
        assert!((u[0] - 0.25).abs() < 1e-12);
        assert!((u[1] - 0.75).abs() < 1e-12);
    }
}
