//! Tridiagonal β-ensemble models and their phase-function representations.
//!
//! Two equivalent views of the spectrum are implemented:
//! * the symmetric tridiagonal matrix itself, counted by Sturm sequences;
//! * the eigenvector-ratio recursion turned into a phase function on the
//!   universal cover of the boundary circle, counted by winding.
//!
//! The conjugated (non-symmetric, same spectrum) model has entries
//!   X_ℓ ~ 𝒩(0, 2/β),   Y_ℓ = χ²_{(n-ℓ-1)β}/(β s_{ℓ+1}) - s_ℓ,
//!   s_ℓ = √(n - ℓ - 1/2),   Y_{n-1} = 0.
//! One forward phase step is the lift of Q(π) A(1, (Λ - X_ℓ)/s_ℓ) W_ℓ with
//! W_ℓ = A((1 + Y_ℓ/s_ℓ)⁻¹, -X_ℓ/s_ℓ), all of which combines into a single
//! affine lift applied at φ + π.
//!
//! The regularized (slowly varying) phase removes the macroscopic rotation
//! with fixed point ρ_ℓ and follows
//!   Δφ_ℓ = ash(S_{ℓ,λ}, -1, e^{iφ_ℓ} η̄_ℓ),
//!   S_{ℓ,λ} = (L_λ)^{T_ℓ} · T_ℓ⁻¹ W_ℓ T_{ℓ+1},
//!   (L_λ)^{T_ℓ} = A(1, λ/(2√(n₀(n₀-ℓ)))),  T_ℓ = A(1/Im ρ_ℓ, -Re ρ_ℓ),
//!   η_ℓ = ρ₀² ⋯ ρ_ℓ²,
//! with the relative phase α_{ℓ,λ} = φ_{ℓ,λ} - φ_{ℓ,0} driven by the same
//! noise at λ and 0.

use crate::hyperbolic::{angular_shift, lifted_apply_affine, GeometryError, MobiusMap, TAU};
use crate::mcharness::RngStream;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate recursion step at index {index}: 1 + Y/s = {value} ≤ 0")]
    DegenerateStep { index: usize, value: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Parameters of the n-point β-ensemble with spectral window center μ.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EnsembleParams {
    pub n: usize,
    pub beta: f64,
    pub mu: f64,
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.n < 2 {
            return Err(EnsembleError::InvalidParams(format!("n = {} < 2", self.n)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(EnsembleError::InvalidParams(format!(
                "beta = {} must be positive",
                self.beta
            )));
        }
        if !self.mu.is_finite() {
            return Err(EnsembleError::InvalidParams("mu must be finite".into()));
        }
        if !(self.n0() > 1.0) {
            return Err(EnsembleError::InvalidParams(format!(
                "n0 = {} must exceed 1 (window center too close to the spectral edge)",
                self.n0()
            )));
        }
        Ok(())
    }

    /// Effective index horizon n₀ = n - μ²/4 - 1/2; the regularized phase
    /// is defined for ℓ ≤ n₀.
    pub fn n0(&self) -> f64 {
        self.n as f64 - self.mu * self.mu / 4.0 - 0.5
    }

    /// Bulk-regime diagnostic n^{1/6}(2√n - |μ|): the local statistics at μ
    /// approach the bulk limit when this is large.
    pub fn bulk_diagnostic(&self) -> f64 {
        let n = self.n as f64;
        n.powf(1.0 / 6.0) * (2.0 * n.sqrt() - self.mu.abs())
    }

    /// Spectral location of the scaled local coordinate λ:
    /// Λ = μ + λ/(2√n₀).
    pub fn window_location(&self, lambda: f64) -> f64 {
        self.mu + lambda / (2.0 * self.n0().sqrt())
    }
}

/// Symmetric tridiagonal matrix (diag length n, offdiag length n-1).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSymmetric {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl TridiagonalSymmetric {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.offdiag[i - 1].abs();
            }
            if i + 1 < n {
                r += self.offdiag[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `lam`, by the Sturm/LDLᵀ
    /// negative-pivot count. Zero pivots are perturbed to the smallest
    /// positive float, which only matters on a measure-zero set.
    pub fn sturm_count_below(&self, lam: f64) -> usize {
        let mut count = 0usize;
        let mut d = self.diag[0] - lam;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..self.n() {
            let e = self.offdiag[i - 1];
            let pivot = if d == 0.0 { f64::MIN_POSITIVE } else { d };
            d = self.diag[i] - lam - e * e / pivot;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// All eigenvalues in (lo, hi], located by bisection of the Sturm
    /// count to absolute tolerance `tol`.
    pub fn eigenvalues_in_window(&self, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
        let k_lo = self.sturm_count_below(lo);
        let k_hi = self.sturm_count_below(hi);
        let mut out = Vec::with_capacity(k_hi.saturating_sub(k_lo));
        for k in k_lo..k_hi {
            // k-th eigenvalue (0-based) is the infimum of lam with
            // count strictly below lam > k.
            let (mut a, mut b) = (lo, hi);
            while b - a > tol {
                let m = 0.5 * (a + b);
                if self.sturm_count_below(m) > k {
                    b = m;
                } else {
                    a = m;
                }
            }
            out.push(0.5 * (a + b));
        }
        out
    }

    /// Default bisection tolerance: 1e-10 · max(1, Gershgorin radius).
    pub fn default_eigen_tol(&self) -> f64 {
        let (lo, hi) = self.gershgorin_bounds();
        1e-10 * (hi - lo).abs().max(1.0)
    }
}

/// Samples the symmetric tridiagonal β-ensemble matrix:
/// diag entries 𝒩(0,2)/√β, offdiagonal entry coupling rows j, j+1 is
/// χ_{(n-1-j)β}/√β. Draw order is fixed (all diagonal, then all
/// offdiagonal) for stream reproducibility.
pub fn sample_tridiagonal(params: &EnsembleParams, stream: &mut RngStream) -> TridiagonalSymmetric {
    let n = params.n;
    let scale = (2.0 / params.beta).sqrt();
    let diag: Vec<f64> = (0..n).map(|_| scale * stream.gaussian()).collect();
    let offdiag: Vec<f64> = (0..n - 1)
        .map(|j| stream.chi(((n - 1 - j) as f64) * params.beta) / params.beta.sqrt())
        .collect();
    TridiagonalSymmetric { diag, offdiag }
}

/// The conjugated non-symmetric model (X, Y, s); same spectrum as the
/// symmetric matrix it is derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatedModel {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

fn s_values(n: usize) -> Vec<f64> {
    (0..n).map(|l| ((n - l) as f64 - 0.5).sqrt()).collect()
}

impl ConjugatedModel {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Exact change of variables from a symmetric matrix: X_j = diag_j,
    /// Y_j = offdiag_j²/s_{j+1} - s_j (and Y_{n-1} = 0).
    pub fn from_matrix(m: &TridiagonalSymmetric) -> Self {
        let n = m.n();
        let s = s_values(n);
        let x = m.diag.clone();
        let mut y = vec![0.0; n];
        for j in 0..n - 1 {
            y[j] = m.offdiag[j] * m.offdiag[j] / s[j + 1] - s[j];
        }
        ConjugatedModel { x, y, s }
    }

    /// Direct sample of the conjugated model:
    /// X_j ~ 𝒩(0,2)/√β, Y_j = χ²_{(n-j-1)β}/(β s_{j+1}) - s_j, Y_{n-1} = 0.
    /// Matches `from_matrix ∘ sample_tridiagonal` in law (exactly, via
    /// χ_k² = χ²_k), though not path-by-path (different draw order).
    pub fn sample(params: &EnsembleParams, stream: &mut RngStream) -> Self {
        let n = params.n;
        let s = s_values(n);
        let scale = (2.0 / params.beta).sqrt();
        let x: Vec<f64> = (0..n).map(|_| scale * stream.gaussian()).collect();
        let mut y = vec![0.0; n];
        for j in 0..n - 1 {
            let df = ((n - j - 1) as f64) * params.beta;
            y[j] = stream.chi_squared(df) / (params.beta * s[j + 1]) - s[j];
        }
        ConjugatedModel { x, y, s }
    }

    /// A value strictly below the whole spectrum (Gershgorin bound of the
    /// equivalent symmetric matrix, minus 1). Requires Y_j + s_j ≥ 0,
    /// which holds for every model produced by this module.
    pub fn spectrum_lower_bound(&self) -> f64 {
        let n = self.n();
        let off = |j: usize| -> f64 {
            // offdiag_j² = s_{j+1}(Y_j + s_j)
            (self.s[j + 1] * (self.y[j] + self.s[j])).max(0.0).sqrt()
        };
        let mut lo = f64::INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += off(i - 1);
            }
            if i + 1 < n {
                r += off(i);
            }
            lo = lo.min(self.x[i] - r);
        }
        lo - 1.0
    }

    fn step_coefficients(&self, l: usize) -> Result<(f64, f64), EnsembleError> {
        let denom = 1.0 + self.y[l] / self.s[l];
        if !(denom > 0.0) {
            return Err(EnsembleError::DegenerateStep {
                index: l,
                value: denom,
            });
        }
        Ok((denom, self.s[l]))
    }
}

/// Forward wild phase function: φ̂_0 = π and
/// φ̂_{ℓ+1} = (φ̂_ℓ + π) ∗ A((1+Y_ℓ/s_ℓ)⁻¹, (Λ-X_ℓ)/s_ℓ).
/// Returns all n+1 values; Λ is an eigenvalue iff φ̂_n ∈ 2πℤ.
pub fn wild_phase_forward(model: &ConjugatedModel, lam: f64) -> Result<Vec<f64>, EnsembleError> {
    let n = model.n();
    let mut phases = Vec::with_capacity(n + 1);
    let mut phi = PI;
    phases.push(phi);
    for l in 0..n {
        let (denom, s) = model.step_coefficients(l)?;
        phi = lifted_apply_affine(1.0 / denom, (lam - model.x[l]) / s, phi + PI)?;
        phases.push(phi);
    }
    Ok(phases)
}

/// Backward target phase function φ̂⊙_ℓ: φ̂⊙_n = 0 and each backward step is
/// the exact functional inverse of the forward step,
/// φ̂⊙_ℓ = φ̂⊙_{ℓ+1} ∗ A(1+Y_ℓ/s_ℓ, (X_ℓ-Λ)/(s_ℓ(1+Y_ℓ/s_ℓ))) - π.
/// Λ is an eigenvalue of the ℓ-truncated problem iff φ̂_ℓ - φ̂⊙_ℓ ∈ 2πℤ.
pub fn target_phase_backward(
    model: &ConjugatedModel,
    lam: f64,
    ell: usize,
) -> Result<f64, EnsembleError> {
    let n = model.n();
    let mut psi = 0.0;
    for j in (ell..n).rev() {
        let (denom, s) = model.step_coefficients(j)?;
        psi = lifted_apply_affine(denom, (model.x[j] - lam) / (s * denom), psi)? - PI;
    }
    Ok(psi)
}

/// Number of eigenvalues below `lam`, computed purely from the phase
/// function: winding of φ̂_n between a point below the spectrum and lam.
/// Agrees with the Sturm count for every lam outside the spectrum
/// (eigenvalues themselves are a measure-zero boundary case).
pub fn phase_count_below(model: &ConjugatedModel, lam: f64) -> Result<i64, EnsembleError> {
    let lam_low = model.spectrum_lower_bound();
    let hi = *wild_phase_forward(model, lam)?.last().unwrap();
    let lo = *wild_phase_forward(model, lam_low)?.last().unwrap();
    Ok((hi / TAU).floor() as i64 - (lo / TAU).floor() as i64)
}

/// ρ_ℓ, the elliptic fixed point of the macroscopic one-step rotation:
/// ρ_ℓ = √(μ²/4 / (μ²/4 + n₀-ℓ)) + i √((n₀-ℓ)/(μ²/4 + n₀-ℓ)), |ρ_ℓ| = 1.
pub fn rho_ell(ell: f64, n0: f64, mu: f64) -> Result<Complex64, EnsembleError> {
    if !(ell >= 0.0) || ell > n0 {
        return Err(EnsembleError::InvalidParams(format!(
            "rho defined for 0 ≤ ell ≤ n0 = {n0}, got {ell}"
        )));
    }
    let q = mu * mu / 4.0;
    let den = q + n0 - ell;
    Ok(Complex64::new(
        (q / den).sqrt(),
        ((n0 - ell) / den).sqrt(),
    ))
}

/// State of the regularized phase run at index ℓ: the coupled phases at
/// local coordinate λ and at 0, their difference α, and the rotation
/// bookkeeping (ρ_ℓ, η_ℓ = ρ₀²⋯ρ_ℓ², θ_ℓ = Arg lift of η_ℓ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedPhaseState {
    pub ell: usize,
    pub rho: Complex64,
    pub eta: Complex64,
    pub theta: f64,
    pub phi: f64,
    pub phi_zero: f64,
    pub alpha: f64,
}

/// Runs the regularized coupled phases φ_{ℓ,λ}, φ_{ℓ,0} for
/// ℓ = 0, …, ℓ_max where ℓ_max is the largest index strictly below n₀.
/// Both start at π; α_{ℓ,λ} = φ_{ℓ,λ} - φ_{ℓ,0}.
pub fn regularized_phase_run(
    model: &ConjugatedModel,
    params: &EnsembleParams,
    lambda: f64,
) -> Result<Vec<RegularizedPhaseState>, EnsembleError> {
    params.validate()?;
    if model.n() != params.n {
        return Err(EnsembleError::InvalidParams(format!(
            "model size {} ≠ params.n {}",
            model.n(),
            params.n
        )));
    }
    let n0 = params.n0();
    let mu = params.mu;
    // Largest integer strictly below n0; Im ρ vanishes at ℓ = n0 and the
    // shift map T_ℓ degenerates there.
    let lmax = {
        let f = n0.floor();
        if n0 - f < 1e-9 {
            (f as usize).saturating_sub(1)
        } else {
            f as usize
        }
    };
    let rho0 = rho_ell(0.0, n0, mu)?;
    let mut states = Vec::with_capacity(lmax + 1);
    let mut eta = rho0 * rho0;
    let mut theta = 2.0 * rho0.arg();
    states.push(RegularizedPhaseState {
        ell: 0,
        rho: rho0,
        eta,
        theta,
        phi: PI,
        phi_zero: PI,
        alpha: 0.0,
    });
    let mut phi = PI;
    let mut phi_zero = PI;
    for l in 0..lmax {
        let rho = states[l].rho;
        let rho_next = rho_ell((l + 1) as f64, n0, mu)?;
        let t_l = MobiusMap::affine(1.0 / rho.im, -rho.re)?;
        let t_next = MobiusMap::affine(1.0 / rho_next.im, -rho_next.re)?;
        let (denom, s) = model.step_coefficients(l)?;
        let w_map = MobiusMap::affine(1.0 / denom, -model.x[l] / s)?;
        // S_{ℓ,0} = T_ℓ⁻¹ W_ℓ T_{ℓ+1} (applied left to right).
        let s_zero = t_l.inverse().then(&w_map).then(&t_next);
        // (L_λ)^{T_ℓ} = A(1, λ/(2√(n₀(n₀-ℓ)))) precedes S_{ℓ,0}.
        let b_l = lambda / (2.0 * (n0 * (n0 - l as f64)).sqrt());
        let s_lambda = MobiusMap::affine(1.0, b_l)?.then(&s_zero);
        let minus_one = Complex64::new(-1.0, 0.0);
        let w_pt = Complex64::from_polar(1.0, phi) * eta.conj();
        let w0_pt = Complex64::from_polar(1.0, phi_zero) * eta.conj();
        phi += angular_shift(&s_lambda, minus_one, w_pt)?;
        phi_zero += angular_shift(&s_zero, minus_one, w0_pt)?;
        // Advance the rotation bookkeeping to index ℓ+1.
        eta *= rho_next * rho_next;
        eta /= eta.norm(); // |ρ| = 1 exactly up to rounding; keep it there
        theta += 2.0 * rho_next.arg();
        states.push(RegularizedPhaseState {
            ell: l + 1,
            rho: rho_next,
            eta,
            theta,
            phi,
            phi_zero,
            alpha: phi - phi_zero,
        });
    }
    Ok(states)
}

/// Regularized target phase φ⊙_{ℓ,λ} = (φ̂⊙_{ℓ,λ} ∗ T_ℓ) + θ_{ℓ-1} - 2πℓ:
/// the backward target transported into the slowly-varying frame (same
/// lift branch as `regularized_phase_run`, see `wild_from_regularized`).
pub fn regularized_target(
    model: &ConjugatedModel,
    params: &EnsembleParams,
    lambda: f64,
    ell: usize,
) -> Result<f64, EnsembleError> {
    let n0 = params.n0();
    let lam = params.window_location(lambda);
    let psi = target_phase_backward(model, lam, ell)?;
    let rho = rho_ell(ell as f64, n0, params.mu)?;
    let theta_prev: f64 = (0..ell)
        .map(|j| 2.0 * rho_ell(j as f64, n0, params.mu).unwrap().arg())
        .sum();
    Ok(lifted_apply_affine(1.0 / rho.im, -rho.re, psi)? + theta_prev - TAU * ell as f64)
}

/// Recovers the wild phase from a regularized state:
/// φ̂_ℓ = ((φ_ℓ - θ_{ℓ-1}) ∗ T_ℓ⁻¹) + 2πℓ with T_ℓ⁻¹ = A(Im ρ_ℓ, Re ρ_ℓ/Im ρ_ℓ).
/// The 2πℓ term reconciles the lift branches: the wild one-step lift
/// (add π, then the π-fixing affine lift) winds one extra full turn per
/// step relative to the conjugated regularized lift.
pub fn wild_from_regularized(
    state: &RegularizedPhaseState,
    theta_prev: f64,
) -> Result<f64, EnsembleError> {
    let rho = state.rho;
    Ok(lifted_apply_affine(rho.im, rho.re / rho.im, state.phi - theta_prev)?
        + TAU * state.ell as f64)
}

/// Exact valve property of the relative phase: ⌊α_{ℓ,λ}/2π⌋ is
/// nondecreasing in ℓ (for λ ≥ 0).
pub fn valve_check(states: &[RegularizedPhaseState]) -> bool {
    let mut prev = i64::MIN;
    for st in states {
        let k = (st.alpha / TAU).floor() as i64;
        if k < prev {
            return false;
        }
        prev = k;
    }
    true
}

/// One matrix sample of the scaled counting function: counts of
/// eigenvalues in the local window (0, λ_j] (signed for λ_j < 0),
/// N(λ) = #{eigenvalues ≤ Λ(λ)} - #{eigenvalues ≤ Λ(0)}.
#[derive(Debug, Clone)]
pub struct CountingSample {
    pub lambdas: Vec<f64>,
    pub counts: Vec<i64>,
}

pub fn scaled_counting_sample(
    params: &EnsembleParams,
    stream: &mut RngStream,
    lambdas: &[f64],
) -> Result<CountingSample, EnsembleError> {
    params.validate()?;
    let m = sample_tridiagonal(params, stream);
    let base = m.sturm_count_below(params.window_location(0.0)) as i64;
    let counts = lambdas
        .iter()
        .map(|&l| m.sturm_count_below(params.window_location(l)) as i64 - base)
        .collect();
    Ok(CountingSample {
        lambdas: lambdas.to_vec(),
        counts,
    })
}
