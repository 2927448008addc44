//! Model parameters shared by every solver: per-class rates, the prelimit
//! queueing system, the limiting diffusion and the running cost.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Offered loads must sum to one within this tolerance.
pub const LOAD_TOLERANCE: f64 = 1e-9;

/// Tolerance on `e·u = 1` for simplex controls.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Rates of one customer class together with its second-order coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    #[serde(default)]
    pub lambda_hat: f64,
    #[serde(default)]
    pub mu_hat: f64,
}

impl ClassParams {
    pub fn new(lambda: f64, mu: f64, gamma: f64) -> Self {
        Self {
            lambda,
            mu,
            gamma,
            lambda_hat: 0.0,
            mu_hat: 0.0,
        }
    }

    pub fn with_second_order(mut self, lambda_hat: f64, mu_hat: f64) -> Self {
        self.lambda_hat = lambda_hat;
        self.mu_hat = mu_hat;
        self
    }

    fn validate(&self, class: usize) -> Result<(), ModelError> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("gamma", self.gamma),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::NonPositiveRate { class, name, value });
            }
        }
        if !self.lambda_hat.is_finite() || !self.mu_hat.is_finite() {
            return Err(ModelError::NonFinite {
                what: "second-order coefficient",
            });
        }
        Ok(())
    }
}

fn check_offered_load(rho: &[f64]) -> Result<(), ModelError> {
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > LOAD_TOLERANCE {
        return Err(ModelError::OfferedLoad { total });
    }
    Ok(())
}

/// A point of the probability simplex `S = {u ≥ 0, e·u = 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexControl(Vec<f64>);

impl SimplexControl {
    pub fn new(u: Vec<f64>) -> Result<Self, ModelError> {
        if u.is_empty() {
            return Err(ModelError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        if u.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::NotInSimplex {
                sum: u.iter().sum(),
            });
        }
        let sum: f64 = u.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ModelError::NotInSimplex { sum });
        }
        Ok(Self(u))
    }

    /// The vertex `e_i` of the simplex in dimension `d`.
    pub fn vertex(d: usize, i: usize) -> Self {
        assert!(i < d, "vertex index {i} out of range for dimension {d}");
        let mut u = vec![0.0; d];
        u[i] = 1.0;
        Self(u)
    }

    /// `e_d`, the control that puts the whole queue on the last class.
    pub fn last_vertex(d: usize) -> Self {
        Self::vertex(d, d - 1)
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexControl {
    type Error = ModelError;

    fn try_from(u: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(u)
    }
}

impl From<SimplexControl> for Vec<f64> {
    fn from(u: SimplexControl) -> Self {
        u.0
    }
}

impl AsRef<[f64]> for SimplexControl {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The n-th system of the Halfin–Whitt sequence: `n` servers and the
/// prelimit per-class rates.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSystem {
    n: u64,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    rho: Vec<f64>,
}

impl QueueSystem {
    /// Builds a system from explicit prelimit rates. `rho` is the vector of
    /// limiting offered loads used to centre the diffusion scaling.
    pub fn new(
        n: u64,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        gamma: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::NoServers);
        }
        let d = lambda.len();
        for v in [&mu, &gamma, &rho] {
            if v.len() != d {
                return Err(ModelError::Dimension {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        for class in 0..d {
            for (name, value) in [
                ("lambda", lambda[class]),
                ("mu", mu[class]),
                ("gamma", gamma[class]),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(ModelError::NonPositiveRate { class, name, value });
                }
            }
        }
        check_offered_load(&rho)?;
        Ok(Self {
            n,
            lambda,
            mu,
            gamma,
            rho,
        })
    }

    /// Prelimit rates `λⁿ = nλ + √n λ̂`, `μⁿ = μ + μ̂/√n`, `γⁿ = γ`.
    pub fn halfin_whitt(classes: &[ClassParams], n: u64) -> Result<Self, ModelError> {
        if classes.is_empty() {
            return Err(ModelError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        for (i, c) in classes.iter().enumerate() {
            c.validate(i)?;
        }
        let sqrt_n = (n as f64).sqrt();
        let lambda = classes
            .iter()
            .map(|c| n as f64 * c.lambda + sqrt_n * c.lambda_hat)
            .collect();
        let mu = classes.iter().map(|c| c.mu + c.mu_hat / sqrt_n).collect();
        let gamma = classes.iter().map(|c| c.gamma).collect();
        let rho = classes.iter().map(|c| c.lambda / c.mu).collect();
        Self::new(n, lambda, mu, gamma, rho)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn servers(&self) -> u64 {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Prelimit offered loads `λᵢⁿ/μᵢⁿ`.
    pub fn offered_load(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| l / m)
            .collect()
    }

    /// Diffusion-scaled state `(x − ρn)/√n`.
    pub fn scale_state(&self, x: &[u64]) -> Vec<f64> {
        let n = self.n as f64;
        let sqrt_n = n.sqrt();
        x.iter()
            .zip(&self.rho)
            .map(|(&xi, &r)| (xi as f64 - r * n) / sqrt_n)
            .collect()
    }
}

/// Parameters of the limiting controlled diffusion
/// `dX = b(X,U)dt + Σ dW` with `b(x,u) = ℓ − R(x − (e·x)⁺u) − (e·x)⁺Γu`.
///
/// `R`, `Γ` and `Σ` are diagonal and stored by their diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    ell: Vec<f64>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
    lambda: Vec<f64>,
    rho: Vec<f64>,
    rho_hat: f64,
}

/// Computes the Halfin–Whitt limit of a sequence of systems.
pub fn build_limit_model(classes: &[ClassParams]) -> Result<DiffusionModel, ModelError> {
    if classes.is_empty() {
        return Err(ModelError::Dimension {
            expected: 1,
            got: 0,
        });
    }
    for (i, c) in classes.iter().enumerate() {
        c.validate(i)?;
    }
    let rho: Vec<f64> = classes.iter().map(|c| c.lambda / c.mu).collect();
    check_offered_load(&rho)?;
    let ell = classes
        .iter()
        .zip(&rho)
        .map(|(c, r)| (c.lambda_hat - r * c.mu_hat) / c.mu)
        .collect();
    let rho_hat = classes
        .iter()
        .zip(&rho)
        .map(|(c, r)| (r * c.mu_hat - c.lambda_hat) / c.mu)
        .sum();
    Ok(DiffusionModel {
        ell,
        mu: classes.iter().map(|c| c.mu).collect(),
        gamma: classes.iter().map(|c| c.gamma).collect(),
        sigma: classes.iter().map(|c| (2.0 * c.lambda).sqrt()).collect(),
        lambda: classes.iter().map(|c| c.lambda).collect(),
        rho,
        rho_hat,
    })
}

impl DiffusionModel {
    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    /// Diagonal of `R`.
    pub fn service_rates(&self) -> &[f64] {
        &self.mu
    }

    /// Diagonal of `Γ`.
    pub fn abandonment_rates(&self) -> &[f64] {
        &self.gamma
    }

    /// Diagonal of `Σ`; `ΣΣᵀ = diag(2λ)`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    /// Diagonal of the covariance `ΣΣᵀ`.
    pub fn covariance_diag(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| 2.0 * l).collect()
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, u, &mut out);
        out
    }

    /// Writes `b(x,u)` into `out`. `u` is assumed to lie in the simplex.
    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let q = positive_part_sum(x);
        for i in 0..self.dim() {
            out[i] = self.ell[i] - self.mu[i] * (x[i] - q * u[i]) - q * self.gamma[i] * u[i];
        }
    }

    /// Component `i` of the drift.
    #[inline]
    pub fn drift_component(&self, i: usize, x_i: f64, queue: f64, u_i: f64) -> f64 {
        self.ell[i] - self.mu[i] * (x_i - queue * u_i) - queue * self.gamma[i] * u_i
    }
}

/// `(e·x)⁺`, the scaled total queue length.
#[inline]
pub fn positive_part_sum(x: &[f64]) -> f64 {
    x.iter().sum::<f64>().max(0.0)
}

/// Power-form running cost `r(q) = Σ hᵢ qᵢᵐ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCost {
    m: f64,
    h: Vec<f64>,
}

impl RunningCost {
    pub fn new(m: f64, h: Vec<f64>) -> Result<Self, ModelError> {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(ModelError::CostExponent { m });
        }
        if h.is_empty() {
            return Err(ModelError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        if h.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::CostWeights);
        }
        Ok(Self { m, h })
    }

    /// `r ≡ 0`; useful for decoupling checks.
    pub fn zero(d: usize) -> Self {
        Self {
            m: 1.0,
            h: vec![0.0; d],
        }
    }

    pub fn linear(h: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(1.0, h)
    }

    pub fn exponent(&self) -> f64 {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().all(|&w| w == 0.0)
    }

    /// Lower growth constant `minᵢhᵢ·d^(1−m)`.
    pub fn c1(&self) -> f64 {
        let d = self.h.len() as f64;
        self.h.iter().cloned().fold(f64::INFINITY, f64::min) * d.powf(1.0 - self.m)
    }

    /// Upper growth constant `maxᵢhᵢ·d`.
    pub fn c2(&self) -> f64 {
        let d = self.h.len() as f64;
        self.h.iter().cloned().fold(0.0, f64::max) * d
    }

    #[inline]
    fn pow(&self, v: f64) -> f64 {
        if self.m == 1.0 {
            v
        } else if self.m == 2.0 {
            v * v
        } else {
            v.powf(self.m)
        }
    }

    /// `r(q)` for a nonnegative queue vector.
    pub fn eval(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(&self.h)
            .map(|(&qi, &w)| w * self.pow(qi.max(0.0)))
            .sum()
    }

    /// `r̃(x,u) = r((e·x)⁺u) = ((e·x)⁺)ᵐ Σ hᵢ uᵢᵐ`.
    pub fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let q = positive_part_sum(x);
        if q == 0.0 {
            return 0.0;
        }
        self.pow(q) * self.simplex_weight(u)
    }

    /// `Σ hᵢ uᵢᵐ`.
    #[inline]
    pub fn simplex_weight(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.h)
            .map(|(&ui, &w)| w * self.pow(ui))
            .sum()
    }
}

/// The inf-compact perturbation `h̃(x) = c₂ + c₂ d^(m−1)|x|ᵐ` together with
/// the constant `k₀` that bounds its ergodic average.
#[derive(Debug, Clone, PartialEq)]
pub struct HTilde {
    c2: f64,
    m: f64,
    d: usize,
    k0: f64,
}

impl HTilde {
    /// `c0` and `delta` come from a stability certificate.
    pub fn new(cost: &RunningCost, c0: f64, delta: f64) -> Self {
        let d = cost.dim();
        let m = cost.exponent();
        let c2 = cost.c2();
        let scale = (d as f64).powf(m - 1.0);
        let denom = 1f64.min(c0).min(cost.c1() * delta.powf(m));
        Self {
            c2,
            m,
            d,
            k0: 2.0 * c2 * scale / denom,
        }
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.c2 + self.c2 * (self.d as f64).powf(self.m - 1.0) * norm.powf(self.m)
    }
}

/// A stationary Markov control `x ↦ u(x) ∈ S` for the diffusion-scaled state.
pub trait MarkovControl: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes the control at `x` into `out`.
    fn control_into(&self, x: &[f64], out: &mut [f64]);

    fn control(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.control_into(x, &mut out);
        out
    }
}

/// The same simplex point everywhere.
#[derive(Debug, Clone)]
pub struct ConstantControl(pub SimplexControl);

impl MarkovControl for ConstantControl {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn control_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.0.as_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_class() -> DiffusionModel {
        build_limit_model(&[
            ClassParams::new(0.5, 1.0, 1.0),
            ClassParams::new(1.0, 2.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn limit_model_zero_second_order() {
        let m = two_class();
        assert_eq!(m.ell(), &[0.0, 0.0]);
        assert_eq!(m.service_rates(), &[1.0, 2.0]);
        assert_eq!(m.abandonment_rates(), &[1.0, 1.0]);
        assert_relative_eq!(m.sigma()[0], 1.0);
        assert_relative_eq!(m.sigma()[1], 2f64.sqrt());
        assert_eq!(m.rho_hat(), 0.0);
    }

    #[test]
    fn limit_model_second_order_terms() {
        let m = build_limit_model(&[ClassParams::new(1.0, 1.0, 1.0).with_second_order(-1.0, 0.0)])
            .unwrap();
        assert_eq!(m.ell(), &[-1.0]);
        assert_eq!(m.rho_hat(), 1.0);
    }

    #[test]
    fn limit_model_rejects_bad_load() {
        let err = build_limit_model(&[
            ClassParams::new(0.5, 1.0, 1.0),
            ClassParams::new(0.6, 2.0, 1.0),
        ])
        .unwrap_err();
        match err {
            ModelError::OfferedLoad { total } => assert_relative_eq!(total, 0.8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn limit_model_rejects_nonpositive_rate() {
        let err = build_limit_model(&[ClassParams::new(1.0, 1.0, 0.0)]).unwrap_err();
        assert!(matches!(
            err,
            ModelError::NonPositiveRate { name: "gamma", .. }
        ));
    }

    #[test]
    fn drift_examples() {
        let m = two_class();
        assert_eq!(m.drift(&[0.0, 0.0], &[0.3, 0.7]), vec![0.0, 0.0]);
        assert_eq!(m.drift(&[-1.0, 0.0], &[0.3, 0.7]), vec![1.0, 0.0]);
        assert_eq!(m.drift(&[1.0, 1.0], &[0.0, 1.0]), vec![-1.0, 0.0]);
    }

    #[test]
    fn running_cost_examples() {
        let c = RunningCost::new(1.0, vec![1.0, 3.0]).unwrap();
        assert_eq!(c.running_cost(&[-1.0, 0.5], &[0.5, 0.5]), 0.0);
        assert_relative_eq!(c.running_cost(&[1.0, 1.0], &[0.5, 0.5]), 4.0);
        let c = RunningCost::new(2.0, vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(c.running_cost(&[2.0, 0.0], &[1.0, 0.0]), 4.0);
    }

    #[test]
    fn growth_constants() {
        let c = RunningCost::new(2.0, vec![1.0, 3.0]).unwrap();
        assert_relative_eq!(c.c1(), 0.5);
        assert_relative_eq!(c.c2(), 6.0);
    }

    #[test]
    fn h_tilde_examples() {
        let c = RunningCost::new(1.0, vec![1.0]).unwrap();
        assert_relative_eq!(c.c2(), 1.0);
        assert_relative_eq!(HTilde::new(&c, 1.0, 1.0).eval(&[0.0]), 1.0);
        let c = RunningCost::new(2.0, vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(c.c2(), 2.0);
        assert_relative_eq!(
            HTilde::new(&c, 1.0, 1.0).eval(&[1.0, 1.0]),
            10.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn k0_from_constants() {
        let c = RunningCost::new(1.0, vec![1.0, 3.0]).unwrap();
        // c2 = 6, c1 = 1, d^(m-1) = 1; the minimum picks c0 = 0.25
        let ht = HTilde::new(&c, 0.25, 0.5);
        assert_relative_eq!(ht.k0(), 2.0 * 6.0 / 0.25);
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexControl::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexControl::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexControl::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(SimplexControl::last_vertex(3).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn halfin_whitt_rates() {
        let classes = [
            ClassParams::new(0.5, 1.0, 1.0).with_second_order(1.0, 2.0),
            ClassParams::new(1.0, 2.0, 3.0),
        ];
        let sys = QueueSystem::halfin_whitt(&classes, 100).unwrap();
        assert_relative_eq!(sys.lambda()[0], 60.0);
        assert_relative_eq!(sys.mu()[0], 1.2);
        assert_relative_eq!(sys.gamma()[1], 3.0);
        assert_eq!(sys.rho(), &[0.5, 0.5]);
        assert_eq!(sys.scale_state(&[55, 52]), vec![0.5, 0.2]);
    }
}
