//! Markov-chain approximation of the controlled generator on a grid.
//!
//! At node `x` and control `u` the chain jumps to `x ± hᵢeᵢ` with rates
//! `λᵢ/hᵢ² + bᵢ(x,u)^±/hᵢ` (upwind) or `λᵢ/hᵢ² ± bᵢ/(2hᵢ)` (central, only
//! where that is nonnegative). Jumps that would leave the box are dropped,
//! which reflects the chain at the boundary.

use std::sync::Arc;

use crate::error::SolverError;
use crate::model::{positive_part_sum, DiffusionModel, HTilde, RunningCost, SimplexControl};

use super::grid::Grid;
use super::hamiltonian::minimize_hamiltonian;

/// Factor applied to the uniformization rate under [`DriftScheme::CentralWhereMonotone`].
pub const CENTRAL_RATE_MARGIN: f64 = 1.05;

/// Spatial discretization of the drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftScheme {
    /// First-order one-sided differences in the direction of the drift.
    #[default]
    Upwind,
    /// Central differences wherever they keep every rate nonnegative,
    /// upwind elsewhere.
    CentralWhereMonotone,
}

/// Control frozen to `frozen` outside the closed ball of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationConfig {
    pub radius: f64,
    pub frozen: SimplexControl,
}

impl TruncationConfig {
    pub fn new(radius: f64, frozen: SimplexControl) -> Self {
        Self { radius, frozen }
    }

    /// Frozen control `e_d` beyond `radius`.
    pub fn with_radius(d: usize, radius: f64) -> Self {
        Self::new(radius, SimplexControl::last_vertex(d))
    }

    /// No truncation: the control is free on the whole grid.
    pub fn none(d: usize) -> Self {
        Self::with_radius(d, f64::INFINITY)
    }
}

/// `ε` and the perturbation `h̃` it multiplies.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub epsilon: f64,
    pub h_tilde: Option<HTilde>,
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            epsilon: 0.0,
            h_tilde: None,
        }
    }

    pub fn new(epsilon: f64, h_tilde: HTilde) -> Self {
        Self {
            epsilon,
            h_tilde: Some(h_tilde),
        }
    }

    fn at(&self, x: &[f64]) -> f64 {
        match &self.h_tilde {
            Some(h) if self.epsilon != 0.0 => self.epsilon * h.eval(x),
            _ => 0.0,
        }
    }
}

/// The assembled controlled chain: candidate actions per node with their
/// jump rates and running costs.
#[derive(Debug, Clone)]
pub struct ControlledChain {
    pub(crate) grid: Arc<Grid>,
    pub(crate) model: DiffusionModel,
    pub(crate) cost: RunningCost,
    pub(crate) scheme: DriftScheme,
    d: usize,
    /// `2d` neighbour indices per node, `usize::MAX` outside the box.
    neighbors: Vec<usize>,
    /// Same as `neighbors` with the node itself in place of `usize::MAX`,
    /// so boundary terms vanish without a branch.
    targets: Vec<usize>,
    /// Range of actions of each node.
    offsets: Vec<usize>,
    /// `2d` rates per action: (down, up) for each dimension.
    rates: Vec<f64>,
    /// Running cost per action, perturbation included.
    costs: Vec<f64>,
    /// `d` control entries per action.
    controls: Vec<f64>,
    /// Nodes where the KKT minimizer is offered as an extra action.
    interior_kkt: Vec<bool>,
    perturbation: Vec<f64>,
    max_rate: f64,
}

impl ControlledChain {
    pub fn assemble(
        model: &DiffusionModel,
        cost: &RunningCost,
        grid: Arc<Grid>,
        trunc: &TruncationConfig,
        perturbation: &Perturbation,
        scheme: DriftScheme,
    ) -> Result<Self, SolverError> {
        let d = model.dim();
        if grid.dim() != d || cost.dim() != d {
            return Err(SolverError::Grid(format!(
                "grid dimension {} and cost dimension {} must equal model dimension {d}",
                grid.dim(),
                cost.dim()
            )));
        }
        if trunc.frozen.dim() != d {
            return Err(SolverError::Truncation(format!(
                "frozen control has dimension {}",
                trunc.frozen.dim()
            )));
        }
        if !(trunc.radius > 0.0) {
            return Err(SolverError::Truncation(format!(
                "radius {} must be positive",
                trunc.radius
            )));
        }
        if !(perturbation.epsilon >= 0.0) {
            return Err(SolverError::Parameter(format!(
                "epsilon = {} must be >= 0",
                perturbation.epsilon
            )));
        }
        if perturbation.epsilon > 0.0 && perturbation.h_tilde.is_none() {
            return Err(SolverError::Parameter(
                "epsilon > 0 requires h-tilde".into(),
            ));
        }

        let n = grid.len();
        let mut neighbors = Vec::with_capacity(2 * d * n);
        for j in 0..n {
            for i in 0..d {
                neighbors.push(grid.neighbor(j, i, false).unwrap_or(usize::MAX));
                neighbors.push(grid.neighbor(j, i, true).unwrap_or(usize::MAX));
            }
        }

        let mut chain = Self {
            grid: grid.clone(),
            model: model.clone(),
            cost: cost.clone(),
            scheme,
            d,
            targets: neighbors
                .iter()
                .enumerate()
                .map(|(k, &y)| if y == usize::MAX { k / (2 * d) } else { y })
                .collect(),
            neighbors,
            offsets: Vec::with_capacity(n + 1),
            rates: Vec::new(),
            costs: Vec::new(),
            controls: Vec::new(),
            interior_kkt: vec![false; n],
            perturbation: vec![0.0; n],
            max_rate: 0.0,
        };

        let vertices: Vec<SimplexControl> = (0..d).map(|i| SimplexControl::vertex(d, i)).collect();
        let last = SimplexControl::last_vertex(d);
        let mut x = vec![0.0; d];
        let mut rates = vec![0.0; 2 * d];
        chain.offsets.push(0);
        for j in 0..n {
            grid.point_into(j, &mut x);
            chain.perturbation[j] = perturbation.at(&x);
            let radius2: f64 = x.iter().map(|v| v * v).sum();
            let frozen = radius2 > trunc.radius * trunc.radius;
            let q = positive_part_sum(&x);
            let candidates: &[SimplexControl] = if frozen {
                std::slice::from_ref(&trunc.frozen)
            } else if q == 0.0 {
                std::slice::from_ref(&last)
            } else {
                chain.interior_kkt[j] = cost.exponent() > 1.0 && d > 1;
                &vertices
            };
            for u in candidates {
                chain.rates_at(j, &x, u.as_slice(), &mut rates)?;
                chain.max_rate = chain.max_rate.max(rates.iter().sum());
                chain.rates.extend_from_slice(&rates);
                chain
                    .costs
                    .push(cost.running_cost(&x, u.as_slice()) + chain.perturbation[j]);
                chain.controls.extend_from_slice(u.as_slice());
            }
            chain.offsets.push(chain.costs.len());
        }
        if !(chain.max_rate > 0.0) {
            return Err(SolverError::Grid(
                "assembled chain has no transitions".into(),
            ));
        }
        if scheme == DriftScheme::CentralWhereMonotone {
            // Central rates sum to 2λ/h² everywhere they apply; without slack the
            // uniformized chain can have no self-loops and become periodic.
            chain.max_rate *= CENTRAL_RATE_MARGIN;
        }
        Ok(chain)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Uniformization step `Δt = 1 / max total rate` (times
    /// [`CENTRAL_RATE_MARGIN`] for the central scheme).
    pub fn time_step(&self) -> f64 {
        1.0 / self.max_rate
    }

    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    pub fn action_count(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn action_rates(&self, node: usize, action: usize) -> &[f64] {
        let a = self.offsets[node] + action;
        &self.rates[2 * self.d * a..2 * self.d * (a + 1)]
    }

    pub fn action_control(&self, node: usize, action: usize) -> &[f64] {
        let a = self.offsets[node] + action;
        &self.controls[self.d * a..self.d * (a + 1)]
    }

    pub fn action_cost(&self, node: usize, action: usize) -> f64 {
        self.costs[self.offsets[node] + action]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[2 * self.d * node..2 * self.d * (node + 1)]
    }

    /// Jump rates at node `j` under control `u`; (down, up) per dimension.
    pub fn rates_at(
        &self,
        j: usize,
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
    ) -> Result<(), SolverError> {
        let q = positive_part_sum(x);
        let h = self.grid.spacing();
        let lambda = self.model.arrival_rates();
        let nb = self.neighbors(j);
        for i in 0..self.d {
            let b = self.model.drift_component(i, x[i], q, u[i]);
            let diffusion = lambda[i] / (h[i] * h[i]);
            let central = 0.5 * b.abs() / h[i];
            let (down, up) = match self.scheme {
                DriftScheme::CentralWhereMonotone if diffusion >= central => {
                    (diffusion - 0.5 * b / h[i], diffusion + 0.5 * b / h[i])
                }
                _ => (
                    diffusion + (-b).max(0.0) / h[i],
                    diffusion + b.max(0.0) / h[i],
                ),
            };
            out[2 * i] = if nb[2 * i] == usize::MAX { 0.0 } else { down };
            out[2 * i + 1] = if nb[2 * i + 1] == usize::MAX { 0.0 } else { up };
            for &r in &out[2 * i..2 * i + 2] {
                if !(r >= 0.0) {
                    return Err(SolverError::NonMonotone { index: j, rate: r });
                }
            }
        }
        Ok(())
    }

    /// `c + Σ rates·(w(y) − w(x))` for one action.
    #[inline]
    fn generator_value(&self, node: usize, rates: &[f64], cost: f64, w: &[f64]) -> f64 {
        let here = w[node];
        let targets = &self.targets[2 * self.d * node..2 * self.d * (node + 1)];
        let mut acc = cost;
        for (&r, &y) in rates.iter().zip(targets) {
            acc += r * (w[y] - here);
        }
        acc
    }

    /// Central-difference gradient of `w` at `node` (one-sided on the boundary).
    fn gradient(&self, node: usize, w: &[f64], out: &mut [f64]) {
        let h = self.grid.spacing();
        let nb = self.neighbors(node);
        for i in 0..self.d {
            let (lo, hi) = (nb[2 * i], nb[2 * i + 1]);
            out[i] = match (lo != usize::MAX, hi != usize::MAX) {
                (true, true) => (w[hi] - w[lo]) / (2.0 * h[i]),
                (true, false) => (w[node] - w[lo]) / h[i],
                (false, true) => (w[hi] - w[node]) / h[i],
                (false, false) => 0.0,
            };
        }
    }

    /// Minimizes `c(x,u) + G^u w(x)` over the node's actions. Returns the
    /// minimum and, if `control` is given, writes the minimizing control.
    #[inline]
    pub(crate) fn minimize_at(
        &self,
        node: usize,
        w: &[f64],
        scratch: &mut NodeScratch,
        control: Option<&mut [f64]>,
    ) -> f64 {
        let stride = 2 * self.d;
        let targets = &self.targets[stride * node..stride * (node + 1)];
        let here = w[node];
        let start = self.offsets[node];
        let end = self.offsets[node + 1];
        let mut best = f64::INFINITY;
        let mut best_action = start;
        for idx in start..end {
            let rates = &self.rates[stride * idx..stride * (idx + 1)];
            let mut v = self.costs[idx];
            for (&r, &y) in rates.iter().zip(targets) {
                v += r * (w[y] - here);
            }
            // `<=` hands ties to the later (larger-index) vertex.
            if v <= best {
                best = v;
                best_action = idx;
            }
        }
        let mut kkt = false;
        if self.interior_kkt[node] {
            self.grid.point_into(node, &mut scratch.x);
            self.gradient(node, w, &mut scratch.p);
            let (u, _) = minimize_hamiltonian(&self.model, &self.cost, &scratch.x, &scratch.p);
            if self
                .rates_at(node, &scratch.x, u.as_slice(), &mut scratch.rates)
                .is_ok()
                && scratch.rates.iter().sum::<f64>() <= self.max_rate
            {
                let c = self.cost.running_cost(&scratch.x, u.as_slice()) + self.perturbation[node];
                let v = self.generator_value(node, &scratch.rates, c, w);
                if v < best {
                    best = v;
                    kkt = true;
                    scratch.u.copy_from_slice(u.as_slice());
                }
            }
        }
        if let Some(control) = control {
            if kkt {
                control.copy_from_slice(&scratch.u);
            } else {
                control.copy_from_slice(
                    &self.controls[self.d * best_action..self.d * (best_action + 1)],
                );
            }
        }
        best
    }

    /// `c(x,u) + G^u w(x)` for a given control.
    pub fn evaluate_control(&self, node: usize, u: &[f64], w: &[f64]) -> f64 {
        let x = self.grid.point(node);
        let mut rates = vec![0.0; 2 * self.d];
        self.rates_at(node, &x, u, &mut rates)
            .expect("rates are nonnegative");
        let c = self.cost.running_cost(&x, u) + self.perturbation[node];
        self.generator_value(node, &rates, c, w)
    }

    pub(crate) fn scratch(&self) -> NodeScratch {
        NodeScratch {
            x: vec![0.0; self.d],
            p: vec![0.0; self.d],
            u: vec![0.0; self.d],
            rates: vec![0.0; 2 * self.d],
        }
    }

    /// Checks every stored action: rates nonnegative and uniformized
    /// probabilities summing to one.
    pub fn stencil_report(&self) -> StencilReport {
        let dt = self.time_step();
        let mut report = StencilReport {
            actions_checked: 0,
            min_rate: f64::INFINITY,
            min_self_probability: f64::INFINITY,
            max_row_sum_error: 0.0,
        };
        for node in 0..self.grid.len() {
            for a in 0..self.action_count(node) {
                let rates = self.action_rates(node, a);
                let total: f64 = rates.iter().sum();
                let stay = 1.0 - dt * total;
                let sum = stay + rates.iter().map(|r| r * dt).sum::<f64>();
                report.actions_checked += 1;
                report.min_rate = rates.iter().cloned().fold(report.min_rate, f64::min);
                report.min_self_probability = report.min_self_probability.min(stay);
                report.max_row_sum_error = report.max_row_sum_error.max((sum - 1.0).abs());
            }
        }
        report
    }
}

pub(crate) struct NodeScratch {
    x: Vec<f64>,
    p: Vec<f64>,
    u: Vec<f64>,
    rates: Vec<f64>,
}

/// Monotonicity and conservation of the uniformized chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilReport {
    pub actions_checked: usize,
    pub min_rate: f64,
    pub min_self_probability: f64,
    pub max_row_sum_error: f64,
}

impl StencilReport {
    pub fn is_monotone(&self) -> bool {
        self.min_rate >= 0.0 && self.min_self_probability >= -1e-12
    }
}
