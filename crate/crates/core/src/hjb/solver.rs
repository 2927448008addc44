use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use crate::error::SolverError;
use crate::model::{DiffusionModel, HTilde, RunningCost};

use super::grid::{ControlField, Grid, ValueField};
use super::operator::{ControlledChain, DriftScheme, Perturbation, TruncationConfig};

/// Iteration controls shared by the ergodic and discounted solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stopping tolerance on `span(V_new − V_old)` per uniformized step.
    pub tol: f64,
    pub max_iters: usize,
    pub scheme: DriftScheme,
    /// Warm-start grids with at least [`MULTILEVEL_MIN_POINTS`] nodes from a
    /// solve on the grid with doubled spacing.
    pub multilevel: bool,
}

pub const MULTILEVEL_MIN_POINTS: usize = 400;

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 5_000_000,
            scheme: DriftScheme::Upwind,
            multilevel: true,
        }
    }
}

/// Output of [`solve_ergodic`].
#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    /// Relative value, zero at the origin.
    pub value: ValueField,
    /// Optimal long-run average cost.
    pub rho: f64,
    pub control: ControlField,
    pub iterations: usize,
    pub span_residual: f64,
    /// Uniformization step used by the iteration.
    pub time_step: f64,
}

struct Sweep {
    next: Vec<f64>,
    min_diff: f64,
    max_diff: f64,
}

/// One Jacobi Bellman sweep: `next = w + Δt·min_u(c + G^u w)`, with
/// `w` scaled by `discount` afterwards.
fn bellman_sweep(chain: &ControlledChain, w: &[f64], dt: f64, discount: f64, out: &mut Sweep) {
    let mut scratch = chain.scratch();
    out.min_diff = f64::INFINITY;
    out.max_diff = f64::NEG_INFINITY;
    for node in 0..w.len() {
        let g = chain.minimize_at(node, w, &mut scratch, None);
        let updated = (w[node] + dt * g) * discount;
        let diff = updated - w[node];
        out.min_diff = out.min_diff.min(diff);
        out.max_diff = out.max_diff.max(diff);
        out.next[node] = updated;
    }
}

/// Minimizing control of `c + G^u w` at every node.
fn greedy_controls(chain: &ControlledChain, w: &[f64]) -> Vec<f64> {
    let d = chain.grid.dim();
    let mut scratch = chain.scratch();
    let mut controls = vec![0.0; w.len() * d];
    for (node, control) in controls.chunks_exact_mut(d).enumerate() {
        chain.minimize_at(node, w, &mut scratch, Some(control));
    }
    controls
}

fn push_span(history: &mut VecDeque<f64>, span: f64) {
    if history.len() == 10 {
        history.pop_front();
    }
    history.push_back(span);
}

/// Solves the (truncated, perturbed) ergodic HJB by relative value
/// iteration on the uniformized chain with a policy improvement every sweep.
pub fn solve_ergodic(
    model: &DiffusionModel,
    cost: &RunningCost,
    grid: Arc<Grid>,
    trunc: &TruncationConfig,
    perturbation: &Perturbation,
    options: &SolverOptions,
) -> Result<ErgodicSolution, SolverError> {
    let warm = coarse_start(&grid, options, |coarse| {
        solve_ergodic(model, cost, coarse, trunc, perturbation, options).map(|s| s.value)
    });
    let chain = ControlledChain::assemble(model, cost, grid, trunc, perturbation, options.scheme)?;
    solve_ergodic_chain(&chain, trunc, warm.as_deref(), options)
}

/// Coarse-grid solution interpolated onto `grid`, if multilevel applies.
fn coarse_start(
    grid: &Grid,
    options: &SolverOptions,
    solve: impl FnOnce(Arc<Grid>) -> Result<ValueField, SolverError>,
) -> Option<Vec<f64>> {
    if !options.multilevel || grid.len() < MULTILEVEL_MIN_POINTS {
        return None;
    }
    let coarse = solve(Arc::new(grid.coarsened()?)).ok()?;
    let mut x = vec![0.0; grid.dim()];
    Some(
        (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut x);
                coarse.interpolate(&x)
            })
            .collect(),
    )
}

/// Like [`solve_ergodic`] on an assembled chain, optionally warm-started.
pub fn solve_ergodic_chain(
    chain: &ControlledChain,
    trunc: &TruncationConfig,
    initial: Option<&[f64]>,
    options: &SolverOptions,
) -> Result<ErgodicSolution, SolverError> {
    check_options(options)?;
    let grid = chain.grid().clone();
    let n = grid.len();
    let origin = grid.origin_index();
    let dt = chain.time_step();

    let mut w = match initial {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    let mut sweep = Sweep {
        next: vec![0.0; n],
        min_diff: 0.0,
        max_diff: 0.0,
    };
    let mut history = VecDeque::new();
    for iteration in 1..=options.max_iters {
        bellman_sweep(chain, &w, dt, 1.0, &mut sweep);
        let span = sweep.max_diff - sweep.min_diff;
        push_span(&mut history, span);
        let anchor = sweep.next[origin];
        for (wi, ni) in w.iter_mut().zip(&sweep.next) {
            *wi = ni - anchor;
        }
        if span < options.tol {
            let rho = 0.5 * (sweep.min_diff + sweep.max_diff) / dt;
            let control = ControlField::new(
                grid.clone(),
                greedy_controls(chain, &w),
                trunc.frozen.clone(),
            );
            return Ok(ErgodicSolution {
                value: ValueField::new(grid, w),
                rho,
                control,
                iterations: iteration,
                span_residual: span,
                time_step: dt,
            });
        }
        if !span.is_finite() {
            break;
        }
    }
    Err(SolverError::NotConverged {
        iterations: options.max_iters,
        recent_spans: history.into(),
    })
}

fn check_options(options: &SolverOptions) -> Result<(), SolverError> {
    if !(options.tol > 0.0) || options.max_iters == 0 {
        return Err(SolverError::Parameter(format!(
            "tol = {} and max_iters = {} must be positive",
            options.tol, options.max_iters
        )));
    }
    Ok(())
}

/// Largest `|c(x,u*(x)) + G^{u*}V(x) − ρ|` over the grid for the returned
/// control, i.e. how well one Bellman evaluation reproduces `ρ`.
pub fn verification_residual(
    model: &DiffusionModel,
    cost: &RunningCost,
    trunc: &TruncationConfig,
    perturbation: &Perturbation,
    options: &SolverOptions,
    solution: &ErgodicSolution,
) -> Result<f64, SolverError> {
    let grid = Arc::new(solution.value.grid().clone());
    let chain = ControlledChain::assemble(
        model,
        cost,
        grid.clone(),
        trunc,
        perturbation,
        options.scheme,
    )?;
    let w = solution.value.values();
    Ok((0..grid.len())
        .map(|node| {
            (chain.evaluate_control(node, solution.control.at_index(node), w) - solution.rho).abs()
        })
        .fold(0.0, f64::max))
}

/// Solves the `α`-discounted HJB `αV = min_u(L^u V + r_ε)` by value
/// iteration with McQueen extrapolation. The returned field is the raw
/// value, so `αV(0)` approximates `ρ` for small `α`.
pub fn solve_discounted(
    model: &DiffusionModel,
    cost: &RunningCost,
    grid: Arc<Grid>,
    trunc: &TruncationConfig,
    alpha: f64,
    perturbation: &Perturbation,
    options: &SolverOptions,
) -> Result<ValueField, SolverError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SolverError::Parameter(format!(
            "discount rate {alpha} must be positive"
        )));
    }
    check_options(options)?;
    let chain = ControlledChain::assemble(
        model,
        cost,
        grid.clone(),
        trunc,
        perturbation,
        options.scheme,
    )?;
    let n = grid.len();
    let dt = chain.time_step();
    let beta = 1.0 / (1.0 + alpha * dt);
    // β/(1 − β)
    let tail = 1.0 / (alpha * dt);

    let mut v = vec![0.0; n];
    let mut sweep = Sweep {
        next: vec![0.0; n],
        min_diff: 0.0,
        max_diff: 0.0,
    };
    let mut history = VecDeque::new();
    for _ in 0..options.max_iters {
        bellman_sweep(&chain, &v, dt, beta, &mut sweep);
        let span = sweep.max_diff - sweep.min_diff;
        push_span(&mut history, span);
        std::mem::swap(&mut v, &mut sweep.next);
        if span < options.tol {
            let shift = tail * 0.5 * (sweep.min_diff + sweep.max_diff);
            return Ok(ValueField::new(grid, v.iter().map(|x| x + shift).collect()));
        }
        if !span.is_finite() {
            break;
        }
    }
    Err(SolverError::NotConverged {
        iterations: options.max_iters,
        recent_spans: history.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub l: f64,
    pub rho_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub rows: Vec<TruncationRow>,
    pub tol_mono: f64,
    /// Pairs `(l₁, l₂)` with `ρ_{l₁} < ρ_{l₂} − tol_mono` for `l₁ < l₂`.
    pub violations: Vec<(f64, f64)>,
}

impl TruncationReport {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `ρ_l` for increasing radii, each solve warm-started from the previous one.
pub fn truncation_sweep(
    model: &DiffusionModel,
    cost: &RunningCost,
    grid: Arc<Grid>,
    l_values: &[f64],
    perturbation: &Perturbation,
    tol_mono: f64,
    options: &SolverOptions,
) -> Result<TruncationReport, SolverError> {
    if l_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SolverError::Truncation(
            "radii must be strictly increasing".into(),
        ));
    }
    let d = model.dim();
    let mut rows = Vec::with_capacity(l_values.len());
    let mut warm: Option<Vec<f64>> = None;
    for &l in l_values {
        let trunc = TruncationConfig::with_radius(d, l);
        let chain = ControlledChain::assemble(
            model,
            cost,
            grid.clone(),
            &trunc,
            perturbation,
            options.scheme,
        )?;
        let sol = solve_ergodic_chain(&chain, &trunc, warm.as_deref(), options)?;
        rows.push(TruncationRow { l, rho_l: sol.rho });
        warm = Some(sol.value.values().to_vec());
    }
    let mut violations = Vec::new();
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            if rows[a].rho_l < rows[b].rho_l - tol_mono {
                violations.push((rows[a].l, rows[b].l));
            }
        }
    }
    Ok(TruncationReport {
        rows,
        tol_mono,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub rho_epsilon: f64,
    pub upper_bound: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub rho_star: f64,
    pub k0: f64,
    pub tol: f64,
    pub rows: Vec<EpsilonRow>,
    /// `ρ_ε` nondecreasing in `ε` within `tol`.
    pub monotone: bool,
}

impl EpsilonReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.rows.iter().all(|r| r.lower_ok && r.upper_ok)
    }
}

/// Checks `ρ_* ≤ ρ_ε ≤ ρ_* + εk₀(1 + ρ_*) + tol` and monotonicity in `ε`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_bound_check(
    model: &DiffusionModel,
    cost: &RunningCost,
    grid: Arc<Grid>,
    trunc: &TruncationConfig,
    eps_values: &[f64],
    h_tilde: &HTilde,
    tol: f64,
    options: &SolverOptions,
) -> Result<EpsilonReport, SolverError> {
    if eps_values.iter().any(|&e| !(e > 0.0)) {
        return Err(SolverError::Parameter(
            "epsilon values must be positive".into(),
        ));
    }
    let base = ControlledChain::assemble(
        model,
        cost,
        grid.clone(),
        trunc,
        &Perturbation::none(),
        options.scheme,
    )?;
    let star = solve_ergodic_chain(&base, trunc, None, options)?;
    let k0 = h_tilde.k0();
    let mut rows = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let perturbation = Perturbation::new(eps, h_tilde.clone());
        let chain = ControlledChain::assemble(
            model,
            cost,
            grid.clone(),
            trunc,
            &perturbation,
            options.scheme,
        )?;
        let sol = solve_ergodic_chain(&chain, trunc, Some(star.value.values()), options)?;
        let upper_bound = star.rho + eps * k0 * (1.0 + star.rho);
        rows.push(EpsilonRow {
            epsilon: eps,
            rho_epsilon: sol.rho,
            upper_bound,
            lower_ok: star.rho <= sol.rho,
            upper_ok: sol.rho <= upper_bound + tol,
        });
    }
    let mut sorted: Vec<&EpsilonRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let monotone = sorted
        .windows(2)
        .all(|w| w[0].rho_epsilon <= w[1].rho_epsilon + tol);
    Ok(EpsilonReport {
        rho_star: star.rho,
        k0,
        tol,
        rows,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_limit_model, ClassParams};

    fn one_class(gamma: f64) -> DiffusionModel {
        build_limit_model(&[ClassParams::new(1.0, 1.0, gamma)]).unwrap()
    }

    fn two_class() -> DiffusionModel {
        build_limit_model(&[
            ClassParams::new(0.5, 1.0, 1.0),
            ClassParams::new(1.0, 2.0, 1.0),
        ])
        .unwrap()
    }

    fn solve(
        model: &DiffusionModel,
        cost: &RunningCost,
        l: f64,
        h: f64,
        options: &SolverOptions,
    ) -> ErgodicSolution {
        let d = model.dim();
        let grid = Arc::new(Grid::uniform(d, l, h).unwrap());
        solve_ergodic(
            model,
            cost,
            grid,
            &TruncationConfig::none(d),
            &Perturbation::none(),
            options,
        )
        .unwrap()
    }

    const STANDARD_NORMAL_POSITIVE_MEAN: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn symmetric_instance_matches_gaussian_value() {
        let sol = solve(
            &one_class(1.0),
            &RunningCost::linear(vec![1.0]).unwrap(),
            6.0,
            0.02,
            &SolverOptions::default(),
        );
        assert!(
            (sol.rho / STANDARD_NORMAL_POSITIVE_MEAN - 1.0).abs() < 0.02,
            "{}",
            sol.rho
        );
        assert_eq!(sol.value.at_origin(), 0.0);
        assert!(sol.span_residual < 1e-8);
    }

    #[test]
    fn asymmetric_instance_matches_piecewise_gaussian() {
        // density ∝ e^{−x²/2} (x<0), e^{−2x²} (x>0)
        let pi = std::f64::consts::PI;
        let exact = 0.25 / ((2.0 * pi).sqrt() / 2.0 + 0.5 * (pi / 2.0).sqrt());
        let sol = solve(
            &one_class(4.0),
            &RunningCost::linear(vec![1.0]).unwrap(),
            6.0,
            0.02,
            &SolverOptions::default(),
        );
        assert!(
            (sol.rho / exact - 1.0).abs() < 0.02,
            "{} vs {exact}",
            sol.rho
        );
    }

    #[test]
    fn zero_cost_gives_zero() {
        let sol = solve(
            &two_class(),
            &RunningCost::zero(2),
            2.0,
            0.25,
            &SolverOptions::default(),
        );
        assert_eq!(sol.rho, 0.0);
        assert!(sol.value.values().iter().all(|&v| v == 0.0));
        let v = solve_discounted(
            &two_class(),
            &RunningCost::zero(2),
            Arc::new(Grid::uniform(2, 2.0, 0.25).unwrap()),
            &TruncationConfig::none(2),
            0.3,
            &Perturbation::none(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn refinement_reduces_error() {
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let coarse = solve(&one_class(1.0), &cost, 6.0, 0.04, &SolverOptions::default());
        let fine = solve(&one_class(1.0), &cost, 6.0, 0.02, &SolverOptions::default());
        assert!(
            (fine.rho - STANDARD_NORMAL_POSITIVE_MEAN).abs()
                < (coarse.rho - STANDARD_NORMAL_POSITIVE_MEAN).abs()
        );
    }

    #[test]
    fn multilevel_agrees_with_cold_start() {
        let cost = RunningCost::linear(vec![1.0, 3.0]).unwrap();
        let warm = solve(&two_class(), &cost, 4.0, 0.2, &SolverOptions::default());
        let cold = solve(
            &two_class(),
            &cost,
            4.0,
            0.2,
            &SolverOptions {
                multilevel: false,
                ..Default::default()
            },
        );
        assert!(
            (warm.rho - cold.rho).abs() < 1e-8 / warm.time_step,
            "{} vs {}",
            warm.rho,
            cold.rho
        );
    }

    #[test]
    fn verification_residual_within_tolerance() {
        let model = two_class();
        let cost = RunningCost::linear(vec![1.0, 3.0]).unwrap();
        let options = SolverOptions::default();
        for scheme in [DriftScheme::Upwind, DriftScheme::CentralWhereMonotone] {
            let options = SolverOptions {
                scheme,
                ..options.clone()
            };
            let sol = solve(&model, &cost, 3.0, 0.2, &options);
            let trunc = TruncationConfig::none(2);
            let r =
                verification_residual(&model, &cost, &trunc, &Perturbation::none(), &options, &sol)
                    .unwrap();
            assert!(r <= options.tol / sol.time_step, "{scheme:?}: {r}");
        }
    }

    #[test]
    fn one_dimensional_truncation_is_flat() {
        let model = one_class(2.0);
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let grid = Arc::new(Grid::uniform(1, 4.0, 0.05).unwrap());
        let report = truncation_sweep(
            &model,
            &cost,
            grid,
            &[1.0, 2.0, 4.0],
            &Perturbation::none(),
            1e-4,
            &SolverOptions::default(),
        )
        .unwrap();
        let first = report.rows[0].rho_l;
        assert!(report.rows.iter().all(|r| (r.rho_l - first).abs() < 1e-4));
        assert!(report.is_monotone());
    }

    #[test]
    fn truncation_is_nonincreasing_in_radius() {
        let model = two_class();
        let cost = RunningCost::linear(vec![1.0, 3.0]).unwrap();
        let grid = Arc::new(Grid::uniform(2, 4.0, 0.2).unwrap());
        let report = truncation_sweep(
            &model,
            &cost,
            grid,
            &[1.0, 2.0, 3.0, 4.0],
            &Perturbation::none(),
            1e-4,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(report.is_monotone(), "{:?}", report.rows);
        assert!(report.rows[0].rho_l > report.rows[3].rho_l);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = one_class(1.0);
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let grid = Arc::new(Grid::uniform(1, 2.0, 0.5).unwrap());
        let trunc = TruncationConfig::none(1);
        let bad = SolverOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(solve_ergodic(
            &model,
            &cost,
            grid.clone(),
            &trunc,
            &Perturbation::none(),
            &bad
        )
        .is_err());
        assert!(solve_discounted(
            &model,
            &cost,
            grid.clone(),
            &trunc,
            0.0,
            &Perturbation::none(),
            &SolverOptions::default()
        )
        .is_err());
        assert!(truncation_sweep(
            &model,
            &cost,
            grid,
            &[2.0, 1.0],
            &Perturbation::none(),
            1e-4,
            &SolverOptions::default()
        )
        .is_err());
    }

    #[test]
    fn reports_non_convergence_with_history() {
        let model = one_class(1.0);
        let cost = RunningCost::linear(vec![1.0]).unwrap();
        let grid = Arc::new(Grid::uniform(1, 4.0, 0.1).unwrap());
        let options = SolverOptions {
            max_iters: 5,
            ..Default::default()
        };
        match solve_ergodic(
            &model,
            &cost,
            grid,
            &TruncationConfig::none(1),
            &Perturbation::none(),
            &options,
        ) {
            Err(SolverError::NotConverged {
                iterations,
                recent_spans,
            }) => {
                assert_eq!(iterations, 5);
                assert_eq!(recent_spans.len(), 5);
            }
            other => panic!("{other:?}"),
        }
    }
}
