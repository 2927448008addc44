//! Lyapunov certificates for the limiting drift.
//!
//! With `Q` solving `QR + RᵀQ = 2I` and `𝒱(x) = [xᵀQx]^{m/2}`, the
//! generator satisfies, for `|x| ≥ R0`,
//!
//! ```text
//! L^u 𝒱(x) ≤ 1 − c₀|x|ᵐ 𝟙_{Kᶜ}(x) + c₁[(e·x)⁺]ᵐ 𝟙_K(x),   K = {δ|x| < (e·x)⁺}.
//! ```
//!
//! Writing `x = tθ` with `|θ| = 1`, `L^u𝒱(tθ) = tᵐ g₁(θ,u) + tᵐ⁻¹ g₀(θ) + tᵐ⁻² g₂(θ)`.
//! The constants come from maximizing `g₀, g₁, g₂` over sampled directions
//! and the simplex vertices (`g₁` is affine in `u`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::StabilityError;
use crate::model::{positive_part_sum, DiffusionModel, RunningCost};
use crate::stats::{stream, StreamRole};

/// Safety factor applied to sampled suprema.
pub const SAFETY: f64 = 1.1;

/// Solves `QR + RᵀQ = 2I` for symmetric positive definite `Q`.
///
/// `R` must be a nonsingular M-matrix: positive diagonal, nonpositive
/// off-diagonal, and `R = sI − N` with `ρ(N) < s`.
pub fn lyapunov_matrix(r: &DMatrix<f64>) -> Result<DMatrix<f64>, StabilityError> {
    let d = r.nrows();
    if d == 0 || r.ncols() != d {
        return Err(StabilityError::NotMMatrix(format!(
            "{}x{} is not square",
            r.nrows(),
            r.ncols()
        )));
    }
    for i in 0..d {
        if !(r[(i, i)] > 0.0) {
            return Err(StabilityError::NotMMatrix(format!(
                "diagonal entry {i} is {}",
                r[(i, i)]
            )));
        }
        for j in 0..d {
            if i != j && r[(i, j)] > 0.0 {
                return Err(StabilityError::NotMMatrix(format!(
                    "off-diagonal entry ({i},{j}) is positive"
                )));
            }
        }
    }
    let s = (0..d).map(|i| r[(i, i)]).fold(0.0, f64::max);
    let n = DMatrix::identity(d, d) * s - r;
    let spectral_radius = n
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if !(spectral_radius < s * (1.0 - 1e-12)) {
        return Err(StabilityError::NotMMatrix(format!(
            "ρ(N) = {spectral_radius} >= s = {s}"
        )));
    }

    // Unknowns: upper triangle of Q, one equation per upper-triangle entry.
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a..d).map(move |b| (a, b))).collect();
    let unknown = |a: usize, b: usize| {
        pairs
            .iter()
            .position(|&p| p == (a.min(b), a.max(b)))
            .unwrap()
    };
    let size = pairs.len();
    let mut system = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        for k in 0..d {
            // (QR)_ij = Σ_k Q_ik R_kj, (RᵀQ)_ij = Σ_k R_ki Q_kj
            system[(row, unknown(i, k))] += r[(k, j)];
            system[(row, unknown(k, j))] += r[(k, i)];
        }
        if i == j {
            rhs[row] = 2.0;
        }
    }
    let solution = system.lu().solve(&rhs).ok_or(StabilityError::Singular)?;
    let mut q = DMatrix::zeros(d, d);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        q[(a, b)] = solution[k];
        q[(b, a)] = solution[k];
    }
    if q.clone().cholesky().is_none() {
        return Err(StabilityError::Indefinite);
    }
    Ok(q)
}

/// Sampling effort for [`build_certificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateOptions {
    pub directions: usize,
    pub seed: u64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            directions: 20_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    #[serde(skip)]
    pub q: DMatrix<f64>,
    /// `λ_min(QR + RᵀQ)`.
    pub kappa0: f64,
    /// `‖Q(R − Γ)‖₂`, bounding the cross term by `C|x|(e·x)⁺`.
    pub cross: f64,
    pub delta: f64,
    pub c0: f64,
    pub c1: f64,
    pub r0: f64,
    pub m: f64,
    /// `−sup g₁` over `Kᶜ`: the `tᵐ` decay rate outside the cone.
    pub decay: f64,
}

impl StabilityCertificate {
    /// `𝒱(x) = [xᵀQx]^{m/2}`.
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        quad(&self.q, x).powf(0.5 * self.m)
    }

    pub fn in_cone(&self, x: &[f64]) -> bool {
        self.delta * norm(x) < positive_part_sum(x)
    }

    /// `L^u𝒱(x)` in closed form.
    pub fn generator(&self, model: &DiffusionModel, x: &[f64], u: &[f64]) -> f64 {
        let d = x.len();
        let m = self.m;
        let s = quad(&self.q, x);
        let g = mat_vec(&self.q, x);
        let b = model.drift(x, u);
        let first = m * s.powf(0.5 * m - 1.0);
        let grad_b: f64 = (0..d).map(|i| g[i] * b[i]).sum::<f64>() * first;
        let second = m * (m - 2.0) * s.powf(0.5 * m - 2.0);
        let lambda = model.arrival_rates();
        let trace: f64 = (0..d)
            .map(|i| lambda[i] * (first * self.q[(i, i)] + second * g[i] * g[i]))
            .sum();
        grad_b + trace
    }

    /// Right-hand side `1 − c₀|x|ᵐ 𝟙_{Kᶜ} + c₁[(e·x)⁺]ᵐ 𝟙_K`.
    pub fn bound(&self, x: &[f64]) -> f64 {
        if self.in_cone(x) {
            1.0 + self.c1 * positive_part_sum(x).powf(self.m)
        } else {
            1.0 - self.c0 * norm(x).powf(self.m)
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn quad(q: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    (0..d)
        .map(|i| (0..d).map(|j| x[i] * q[(i, j)] * x[j]).sum::<f64>())
        .sum()
}

fn mat_vec(q: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| (0..d).map(|j| q[(i, j)] * x[j]).sum())
        .collect()
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Unit directions: exact for `d ≤ 2`, random (plus axes and `±e/√d`) above.
fn directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = stream(seed, 0, StreamRole::Sampling);
            let mut out = Vec::with_capacity(count + 2 * d + 2);
            for i in 0..d {
                for s in [-1.0, 1.0] {
                    let mut e = vec![0.0; d];
                    e[i] = s;
                    out.push(e);
                }
            }
            let diag_dir = 1.0 / (d as f64).sqrt();
            out.push(vec![diag_dir; d]);
            out.push(vec![-diag_dir; d]);
            while out.len() < count + 2 * d + 2 {
                out.push(random_direction(&mut rng, d));
            }
            out
        }
    }
}

fn random_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Builds `Q`, `κ₀`, `δ = κ₀/(4C)` and the drift-bound constants.
///
/// `δ` is capped at `√d`: any larger value already makes `K` empty.
pub fn build_certificate(
    model: &DiffusionModel,
    cost: &RunningCost,
    options: &CertificateOptions,
) -> Result<StabilityCertificate, StabilityError> {
    let d = model.dim();
    let m = cost.exponent();
    let r = diag(model.service_rates());
    let gamma = diag(model.abandonment_rates());
    let q = lyapunov_matrix(&r)?;
    let sym = &q * &r + r.transpose() * &q;
    let kappa0 = sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cross = (&q * (&r - &gamma))
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let delta = if cross > 0.0 {
        (kappa0 / (4.0 * cross)).min((d as f64).sqrt())
    } else {
        (d as f64).sqrt()
    };

    let mut cert = StabilityCertificate {
        q,
        kappa0,
        cross,
        delta,
        c0: 0.0,
        c1: 0.0,
        r0: 1.0,
        m,
        decay: 0.0,
    };

    let mu = model.service_rates();
    let gam = model.abandonment_rates();
    let lambda = model.arrival_rates();
    let ell = model.ell();
    let mut sup_outside = f64::NEG_INFINITY;
    let mut sup_g0: f64 = 0.0;
    let mut sup_g2: f64 = 0.0;
    let mut inside: Vec<(f64, f64)> = Vec::new();
    for theta in directions(d, options.directions, options.seed) {
        let s = quad(&cert.q, &theta);
        let g = mat_vec(&cert.q, &theta);
        let first = m * s.powf(0.5 * m - 1.0);
        let second = m * (m - 2.0) * s.powf(0.5 * m - 2.0);
        let qpos = positive_part_sum(&theta);
        let g0 = first * (0..d).map(|i| g[i] * ell[i]).sum::<f64>();
        let g2: f64 = (0..d)
            .map(|i| lambda[i] * (first * cert.q[(i, i)] + second * g[i] * g[i]))
            .sum();
        sup_g0 = sup_g0.max(g0.abs());
        sup_g2 = sup_g2.max(g2);
        // Vertex e_k: −Rθ + (e·θ)⁺(R − Γ)e_k
        let base: f64 = -(0..d).map(|i| g[i] * mu[i] * theta[i]).sum::<f64>();
        let worst = (0..d)
            .map(|k| first * (base + qpos * g[k] * (mu[k] - gam[k])))
            .fold(f64::NEG_INFINITY, f64::max);
        if cert.in_cone(&theta) {
            inside.push((worst, qpos));
        } else {
            sup_outside = sup_outside.max(worst);
        }
    }
    if !(sup_outside < 0.0) {
        return Err(StabilityError::NoDecay { sup: sup_outside });
    }
    let decay = -sup_outside;
    let c0 = decay / SAFETY;
    let slack = decay - c0;
    let g0 = SAFETY * sup_g0;
    let g2 = SAFETY * sup_g2;
    let r0 = 1f64.max(3.0 * g0 / slack).max((3.0 * g2 / slack).sqrt());
    let c1 = SAFETY
        * inside
            .iter()
            .map(|&(g1, qpos)| (g1 + 2.0 * slack / 3.0).max(0.0) / qpos.powf(m))
            .fold(0.0, f64::max);

    cert.decay = decay;
    cert.c0 = c0;
    cert.c1 = c1;
    cert.r0 = r0;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftCheckReport {
    pub samples: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Smallest `bound − L^u𝒱` seen (negative means a violation).
    pub worst_margin: f64,
    pub radius: f64,
}

/// Samples points with `|x| ≥ R0` (log-uniform radius up to `20·R0`) and
/// checks the drift inequality at every simplex vertex and two random
/// interior controls.
pub fn check_drift_inequality(
    cert: &StabilityCertificate,
    model: &DiffusionModel,
    samples: usize,
    radius: Option<f64>,
    seed: u64,
) -> DriftCheckReport {
    let d = model.dim();
    let r0 = radius.unwrap_or(cert.r0);
    let mut rng = stream(seed, 0, StreamRole::Sampling);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut controls: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            e
        })
        .collect();
    for _ in 0..samples {
        let dir = random_direction(&mut rng, d);
        let t = r0 * (rng.random::<f64>() * 20f64.ln()).exp();
        let x: Vec<f64> = dir.iter().map(|v| v * t).collect();
        controls.truncate(d);
        for _ in 0..2 {
            let raw: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = raw.iter().sum();
            controls.push(raw.into_iter().map(|v| v / s).collect());
        }
        let bound = cert.bound(&x);
        let mut violated = false;
        for u in &controls {
            let margin = bound - cert.generator(model, &x, u);
            worst = worst.min(margin);
            if margin < -1e-8 {
                violated = true;
            }
        }
        violations += violated as usize;
    }
    DriftCheckReport {
        samples,
        violations,
        violation_fraction: violations as f64 / samples.max(1) as f64,
        worst_margin: worst,
        radius: r0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_limit_model, ClassParams};
    use approx::assert_relative_eq;

    #[test]
    fn identity_gives_identity() {
        let q = lyapunov_matrix(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(q, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_rates() {
        let q = lyapunov_matrix(&diag(&[1.0, 2.0])).unwrap();
        assert_relative_eq!(q, diag(&[1.0, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn triangular_m_matrix() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.0, 1.0]);
        let q = lyapunov_matrix(&r).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 1.0 / 6.0, 1.0 / 6.0, 7.0 / 6.0]);
        assert_relative_eq!(q, expected, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_m_matrix() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        assert!(matches!(
            lyapunov_matrix(&r),
            Err(StabilityError::NotMMatrix(_))
        ));
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            lyapunov_matrix(&r),
            Err(StabilityError::NotMMatrix(_))
        ));
    }

    #[test]
    fn kappa0_is_two_for_identity_rates() {
        let model = build_limit_model(&[
            ClassParams::new(0.5, 1.0, 2.0),
            ClassParams::new(0.5, 1.0, 1.0),
        ])
        .unwrap();
        let cert = build_certificate(
            &model,
            &RunningCost::linear(vec![1.0, 1.0]).unwrap(),
            &Default::default(),
        )
        .unwrap();
        assert_relative_eq!(cert.kappa0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_service_and_abandonment_kills_cross_term() {
        let model = build_limit_model(&[
            ClassParams::new(0.5, 1.0, 1.0),
            ClassParams::new(1.0, 2.0, 2.0),
        ])
        .unwrap();
        let cert = build_certificate(
            &model,
            &RunningCost::linear(vec![1.0, 1.0]).unwrap(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(cert.cross, 0.0);
        assert_relative_eq!(cert.delta, 2f64.sqrt());
        assert!(!cert.in_cone(&[1.0, 1.0]));
    }

    #[test]
    fn one_dimensional_quadratic() {
        // 𝒱 = x², L𝒱 = 2x·b + 2λ with b = −x
        let model = build_limit_model(&[ClassParams::new(1.0, 1.0, 1.0)]).unwrap();
        let cost = RunningCost::new(2.0, vec![1.0]).unwrap();
        let cert = build_certificate(&model, &cost, &Default::default()).unwrap();
        for x in [-7.0, 3.0, 12.5] {
            assert_relative_eq!(cert.lyapunov(&[x]), x * x, epsilon = 1e-12);
            assert_relative_eq!(
                cert.generator(&model, &[x], &[1.0]),
                -2.0 * x * x + 2.0,
                epsilon = 1e-9
            );
        }
        let report = check_drift_inequality(&cert, &model, 2_000, None, 3);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn generator_matches_finite_differences() {
        let model = build_limit_model(&[
            ClassParams::new(0.5, 1.0, 3.0).with_second_order(0.3, -0.2),
            ClassParams::new(1.0, 2.0, 1.0),
        ])
        .unwrap();
        for m in [1.0, 1.5, 2.0, 3.0] {
            let cost = RunningCost::new(m, vec![1.0, 2.0]).unwrap();
            let cert = build_certificate(
                &model,
                &cost,
                &CertificateOptions {
                    directions: 500,
                    seed: 1,
                },
            )
            .unwrap();
            let x = [1.3, -0.4];
            let u = [0.3, 0.7];
            let h = 1e-4;
            let v = |y: [f64; 2]| cert.lyapunov(&y);
            let b = model.drift(&x, &u);
            let lambda = model.arrival_rates();
            let mut fd = 0.0;
            for i in 0..2 {
                let mut up = x;
                let mut down = x;
                up[i] += h;
                down[i] -= h;
                fd += b[i] * (v(up) - v(down)) / (2.0 * h);
                fd += lambda[i] * (v(up) - 2.0 * v(x) + v(down)) / (h * h);
            }
            assert_relative_eq!(
                cert.generator(&model, &x, &u),
                fd,
                epsilon = 1e-5,
                max_relative = 1e-5
            );
        }
    }
}
