//! Stochastic sine equation (SSE), Brownian carousel, and limiting phase
//! SDE integrators.
//!
//! The coupled SSE drives one relative phase per spectral parameter λ with
//! a shared complex Brownian increment:
//!     dα_λ = λ f(t) dt + Re((e^{-iα_λ} - 1) dZ),   α_λ(0) = 0,
//! with intensity f ≥ 0; for the native bulk limit f(t) = (β/4) e^{-βt/4}.
//! The single-λ marginal is dα = λ f dt + 2 sin(α/2) dW. As t → ∞, α_λ
//! converges to an even lattice point 2πN(λ); the integer field N is the
//! point-count process, nondecreasing in λ (with N(0) = 0 exactly).
//!
//! The Brownian carousel is the geometric picture of the same counts:
//! a hyperbolic Brownian motion B in the unit disk, dB = (1-|B|²)/2 dZ̃,
//! and boundary points rotating about it,
//!     ∂_t γ_λ = λ f(t) |e^{iγ_λ} - B|² / (1 - |B|²),
//! with the phase read off through the Möbius transport
//! 𝒯(w, z) = S(w, z)/S(w, z₀), S(w, z) = (z - w)/(1 - w̄ z), lifted along
//! a continuous branch.

use crate::hyperbolic::{disk_transport, GeometryError, TAU};
use crate::mcharness::RngStream;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarouselError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("step rejection exhausted at t = {t}: lifted increment stayed above π/2")]
    StepRejected { t: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rotation intensity f of the carousel / SSE.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum IntensitySpec {
    /// f(t) = (β/4) e^{-βt/4}: the Sine_β intensity; ‖f‖₁ = 1, ‖f‖₂² = β/8.
    Exponential { beta: f64 },
    /// Piecewise-linear nonnegative table on an increasing time grid,
    /// zero after the last node.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl IntensitySpec {
    pub fn validate(&self) -> Result<(), CarouselError> {
        match self {
            IntensitySpec::Exponential { beta } => {
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(CarouselError::InvalidInput(format!(
                        "exponential intensity requires beta > 0, got {beta}"
                    )));
                }
            }
            IntensitySpec::Tabulated { times, values } => {
                if times.len() != values.len() || times.len() < 2 {
                    return Err(CarouselError::InvalidInput(
                        "tabulated intensity needs ≥ 2 matching nodes".into(),
                    ));
                }
                if times[0] != 0.0 {
                    return Err(CarouselError::InvalidInput(
                        "tabulated intensity must start at t = 0".into(),
                    ));
                }
                for w in times.windows(2) {
                    if !(w[1] > w[0]) {
                        return Err(CarouselError::InvalidInput(
                            "tabulated times must be strictly increasing".into(),
                        ));
                    }
                }
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(CarouselError::InvalidInput(
                        "tabulated values must be finite and ≥ 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            IntensitySpec::Exponential { beta } => beta / 4.0 * (-beta * t / 4.0).exp(),
            IntensitySpec::Tabulated { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                    Ok(i) => values[i],
                    Err(i) => {
                        if i >= times.len() {
                            0.0
                        } else {
                            let (t0, t1) = (times[i - 1], times[i]);
                            let (v0, v1) = (values[i - 1], values[i]);
                            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                        }
                    }
                }
            }
        }
    }

    /// Remaining mass ∫_t^∞ f.
    pub fn tail_mass(&self, t: f64) -> f64 {
        match self {
            IntensitySpec::Exponential { beta } => (-beta * t / 4.0).exp(),
            IntensitySpec::Tabulated { times, values } => {
                let mut tail = 0.0;
                for i in (1..times.len()).rev() {
                    let (t0, t1) = (times[i - 1], times[i]);
                    if t >= t1 {
                        break;
                    }
                    let a = t.max(t0);
                    let va = self.value(a);
                    tail += 0.5 * (va + values[i]) * (t1 - a);
                }
                tail
            }
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.tail_mass(0.0)
    }

    pub fn l2_norm_squared(&self) -> f64 {
        match self {
            IntensitySpec::Exponential { beta } => beta / 8.0,
            IntensitySpec::Tabulated { times, values } => {
                // Exact integral of the square of a piecewise-linear function.
                let mut acc = 0.0;
                for i in 1..times.len() {
                    let (v0, v1) = (values[i - 1], values[i]);
                    acc += (times[i] - times[i - 1]) * (v0 * v0 + v0 * v1 + v1 * v1) / 3.0;
                }
                acc
            }
        }
    }

    /// Time after which the remaining mass is ≤ eps.
    fn tail_time(&self, eps: f64) -> f64 {
        match self {
            IntensitySpec::Exponential { beta } => 4.0 / beta * (1.0 / eps).ln(),
            IntensitySpec::Tabulated { times, .. } => *times.last().unwrap(),
        }
    }
}

/// Integrator controls. `t_hard_max = None` uses the default hard stop
/// 40 (4/β)(1 + log(1 + |λ|_max)) for the exponential intensity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    pub dt_max: f64,
    pub epsilon_tail: f64,
    /// δ: distance to 2πℤ below which a coordinate counts as converged.
    pub angle_tol: f64,
    /// δ_below: margin below the lattice level qualifying a "below" entry.
    pub below_margin: f64,
    /// Time horizon for deciding the convergence direction of a path whose
    /// offset opposes the remaining drift: such paths keep integrating (in
    /// exact offset coordinates, immune to the f64 resolution floor of the
    /// lattice point) until the drift carries them across, a certified bound
    /// shows it never will, or this horizon is reached.
    #[serde(default = "default_below_horizon")]
    pub below_horizon: f64,
    pub t_hard_max: Option<f64>,
}

fn default_below_horizon() -> f64 {
    5000.0
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt_max: 1e-3,
            epsilon_tail: 1e-4,
            angle_tol: 0.05,
            below_margin: 1e-3,
            below_horizon: default_below_horizon(),
            t_hard_max: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), CarouselError> {
        if !(self.dt_max > 0.0 && self.epsilon_tail > 0.0 && self.angle_tol > 0.0) {
            return Err(CarouselError::InvalidInput(
                "dt_max, epsilon_tail, angle_tol must be positive".into(),
            ));
        }
        if !(self.below_margin >= 0.0 && self.below_margin < self.angle_tol) {
            return Err(CarouselError::InvalidInput(
                "below_margin must lie in [0, angle_tol)".into(),
            ));
        }
        if !(self.below_horizon > 0.0) {
            return Err(CarouselError::InvalidInput(
                "below_horizon must be positive".into(),
            ));
        }
        Ok(())
    }

    fn hard_stop(&self, intensity: &IntensitySpec, lambda_max: f64) -> f64 {
        if let Some(t) = self.t_hard_max {
            return t;
        }
        let scale = match intensity {
            IntensitySpec::Exponential { beta } => 4.0 / beta,
            IntensitySpec::Tabulated { times, .. } => 1.0 + *times.last().unwrap(),
        };
        40.0 * scale * (1.0 + (1.0 + lambda_max.abs()).ln())
    }
}

/// How a converged path approached its final lattice level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    Above,
    Below,
    Undecided,
}

/// Streaming classifier of the approach to the final level: watches the
/// δ-tube around the nearest lattice point, resetting whenever the path
/// leaves the tube or switches level.
#[derive(Debug, Clone, Copy)]
pub struct ApproachTracker {
    level: i64,
    in_tube: bool,
    entry_below: bool,
    min_off: f64,
    max_off: f64,
    angle_tol: f64,
    below_margin: f64,
}

impl ApproachTracker {
    pub fn new(angle_tol: f64, below_margin: f64) -> Self {
        // α(0) = 0 sits exactly on level 0.
        ApproachTracker {
            level: 0,
            in_tube: true,
            entry_below: false,
            min_off: 0.0,
            max_off: 0.0,
            angle_tol,
            below_margin,
        }
    }

    pub fn update(&mut self, alpha: f64) {
        let k = (alpha / TAU).round() as i64;
        let off = alpha - TAU * k as f64;
        if off.abs() < self.angle_tol {
            if !self.in_tube || k != self.level {
                self.level = k;
                self.in_tube = true;
                self.entry_below = off < -self.below_margin;
                self.min_off = off;
                self.max_off = off;
            } else {
                self.min_off = self.min_off.min(off);
                self.max_off = self.max_off.max(off);
            }
        } else {
            self.in_tube = false;
        }
    }

    pub fn converged(&self) -> bool {
        self.in_tube
    }

    pub fn classify(&self) -> Approach {
        if !self.in_tube {
            Approach::Undecided
        } else if self.min_off >= 0.0 {
            Approach::Above
        } else if self.entry_below && self.max_off < 0.0 {
            Approach::Below
        } else {
            Approach::Undecided
        }
    }
}

/// Offline classification of a stored path (t_i, α_i): independent
/// backward-scanning implementation of the tracker semantics.
pub fn classify_approach(path: &[(f64, f64)], angle_tol: f64, below_margin: f64) -> Approach {
    let Some(&(_, last)) = path.last() else {
        return Approach::Undecided;
    };
    let level = (last / TAU).round() as i64;
    let l = TAU * level as f64;
    if (last - l).abs() >= angle_tol {
        return Approach::Undecided;
    }
    // Window = suffix since the last entry into the δ-tube of this level.
    let mut start = 0;
    for i in (0..path.len()).rev() {
        let off = path[i].1 - l;
        if off.abs() >= angle_tol {
            start = i + 1;
            break;
        }
    }
    let entry_off = path[start].1 - l;
    let mut min_off = f64::INFINITY;
    let mut max_off = f64::NEG_INFINITY;
    for &(_, a) in &path[start..] {
        min_off = min_off.min(a - l);
        max_off = max_off.max(a - l);
    }
    if min_off >= 0.0 {
        Approach::Above
    } else if entry_off < -below_margin && max_off < 0.0 {
        Approach::Below
    } else {
        Approach::Undecided
    }
}

/// Diffusion coefficient 2 sin(α/2) of the single-λ SSE, computed through
/// an exact 2π range reduction so it vanishes exactly at stored lattice
/// multiples k·2π (sign carried by the parity of k).
pub fn noise_coefficient(alpha: f64) -> f64 {
    let k = (alpha / TAU).round();
    let rem = alpha - TAU * k;
    let s = 2.0 * (rem / 2.0).sin();
    if (k as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

/// One Euler step of the single-λ SSE: α + λ f dt + 2 sin(α/2) dW.
/// At α ∈ 2πℤ (as stored) the update is pure drift, exactly.
pub fn step_single_sse(alpha: f64, lambda: f64, f_value: f64, dt: f64, dw: f64) -> f64 {
    alpha + lambda * f_value * dt + noise_coefficient(alpha) * dw
}

/// One Euler step of the coupled SSE for all λ simultaneously with the
/// shared complex increment dZ. Uses the same exact range reduction:
/// Re((e^{-iα} - 1) dZ) = (cos α - 1) Re dZ + sin α · Im dZ evaluated at
/// the reduced angle, so the λ = 0 coordinate stays exactly 0.
pub fn step_coupled_sse(
    alphas: &mut [f64],
    lambdas: &[f64],
    f_value: f64,
    dt: f64,
    dz: Complex64,
) {
    for (a, &lam) in alphas.iter_mut().zip(lambdas) {
        let k = (*a / TAU).round();
        let rem = *a - TAU * k;
        let (sin_a, cos_a) = rem.sin_cos();
        *a += lam * f_value * dt + (cos_a - 1.0) * dz.re + sin_a * dz.im;
    }
}

/// One Euler step of hyperbolic Brownian motion in the disk,
/// dB = (1 - |B|²)/2 dZ̃, clamped to |B| ≤ 1 - 1e-9.
pub fn step_hyperbolic_bm(b: Complex64, dz: Complex64) -> (Complex64, bool) {
    let mut next = b + (1.0 - b.norm_sqr()) / 2.0 * dz;
    let r = next.norm();
    const RMAX: f64 = 1.0 - 1e-9;
    if r > RMAX {
        next *= RMAX / r;
        (next, true)
    } else {
        (next, false)
    }
}

/// Result of integrating a family of counting coordinates to convergence.
#[derive(Debug, Clone)]
pub struct CountResult {
    pub lambdas: Vec<f64>,
    pub counts: Vec<i64>,
    pub final_alphas: Vec<f64>,
    pub converged: Vec<bool>,
    pub approaches: Vec<Approach>,
    pub stop_time: f64,
    pub clamped: bool,
    /// Whether the final counts were nondecreasing along the sorted grid.
    pub monotone: bool,
}

struct SortedGrid {
    values: Vec<f64>,
    /// position of user lambda i in `values`
    back: Vec<usize>,
}

fn sorted_grid(lambdas: &[f64]) -> Result<SortedGrid, CarouselError> {
    if lambdas.is_empty() {
        return Err(CarouselError::InvalidInput("empty lambda grid".into()));
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(CarouselError::InvalidInput("non-finite lambda".into()));
    }
    let mut values: Vec<f64> = lambdas.to_vec();
    values.push(0.0); // the λ = 0 coordinate anchors the monotone family
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let back = lambdas
        .iter()
        .map(|l| values.binary_search_by(|x| x.partial_cmp(l).unwrap()).unwrap())
        .collect();
    Ok(SortedGrid { values, back })
}

/// Core coupled-SSE loop; `observe` sees (t, sorted αs) after every step.
fn run_coupled_sse<F: FnMut(f64, &[f64])>(
    intensity: &IntensitySpec,
    grid: &[f64],
    config: &SolverConfig,
    stream: &mut RngStream,
    mut observe: F,
) -> Result<(Vec<f64>, Vec<ApproachTracker>, f64), CarouselError> {
    let lambda_max = grid.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let t_hard = config.hard_stop(intensity, lambda_max);
    let t_tail = intensity.tail_time(config.epsilon_tail);
    let mut alphas = vec![0.0f64; grid.len()];
    let mut trackers = vec![ApproachTracker::new(config.angle_tol, config.below_margin); grid.len()];
    let mut t = 0.0;
    let mut scratch = vec![0.0f64; grid.len()];
    while t < t_hard {
        let f = intensity.value(t);
        let mut dt = config.dt_max.min(0.05 / (1.0 + lambda_max * f));
        // A redraw at a halved step keeps the increment a genuine Brownian
        // increment of the new step; only the monotone coupling of the
        // discretization is being protected here.
        let mut accepted = false;
        for _ in 0..12 {
            let (g1, g2) = stream.gaussian_pair();
            let dz = Complex64::new(g1, g2) * dt.sqrt();
            scratch.copy_from_slice(&alphas);
            step_coupled_sse(&mut scratch, grid, f, dt, dz);
            if scratch.windows(2).all(|w| w[0] <= w[1]) {
                accepted = true;
                break;
            }
            dt /= 2.0;
        }
        if !accepted {
            // Accept the last trial; final monotonicity is re-checked on
            // the counts and surfaced through `monotone`.
            let (g1, g2) = stream.gaussian_pair();
            let dz = Complex64::new(g1, g2) * dt.sqrt();
            scratch.copy_from_slice(&alphas);
            step_coupled_sse(&mut scratch, grid, f, dt, dz);
        }
        alphas.copy_from_slice(&scratch);
        t += dt;
        for (tr, &a) in trackers.iter_mut().zip(&alphas) {
            tr.update(a);
        }
        observe(t, &alphas);
        if t >= t_tail && trackers.iter().all(|tr| tr.converged()) {
            break;
        }
    }
    Ok((alphas, trackers, t))
}

fn finish_counts(
    grid: SortedGrid,
    alphas: Vec<f64>,
    trackers: Vec<ApproachTracker>,
    stop_time: f64,
    clamped: bool,
) -> CountResult {
    let sorted_counts: Vec<i64> = alphas
        .iter()
        .map(|a| (a / TAU).round() as i64)
        .collect();
    let monotone = sorted_counts.windows(2).all(|w| w[0] <= w[1]);
    let zero_pos = grid
        .values
        .binary_search_by(|x| x.partial_cmp(&0.0).unwrap())
        .unwrap();
    debug_assert_eq!(alphas[zero_pos], 0.0);
    let pick = |v: &[i64], i: usize| v[grid.back[i]];
    let counts = (0..grid.back.len()).map(|i| pick(&sorted_counts, i)).collect();
    let final_alphas = grid.back.iter().map(|&j| alphas[j]).collect();
    let converged = grid.back.iter().map(|&j| trackers[j].converged()).collect();
    let approaches = grid.back.iter().map(|&j| trackers[j].classify()).collect();
    CountResult {
        lambdas: grid.values.clone(),
        counts,
        final_alphas,
        converged,
        approaches,
        stop_time,
        clamped,
        monotone,
    }
}

/// Integrates the coupled SSE to convergence and reads off the counts
/// N(λ) = α_λ(∞)/2π for each requested λ (in the order given).
/// `CountResult.lambdas` holds the internal sorted grid (with 0 added);
/// all per-λ output vectors follow the order of the input grid.
pub fn solve_counts(
    intensity: &IntensitySpec,
    lambdas: &[f64],
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<CountResult, CarouselError> {
    intensity.validate()?;
    config.validate()?;
    let grid = sorted_grid(lambdas)?;
    let (alphas, trackers, t) =
        run_coupled_sse(intensity, &grid.values, config, stream, |_, _| {})?;
    Ok(finish_counts(grid, alphas, trackers, t, false))
}

/// Same as `solve_counts` but records the sorted-α trajectory every
/// `every`-th step (for offline diagnostics and classification tests).
pub fn solve_counts_recording(
    intensity: &IntensitySpec,
    lambdas: &[f64],
    config: &SolverConfig,
    stream: &mut RngStream,
    every: usize,
) -> Result<(CountResult, Vec<(f64, Vec<f64>)>), CarouselError> {
    intensity.validate()?;
    config.validate()?;
    let grid = sorted_grid(lambdas)?;
    let mut path = Vec::new();
    let mut k = 0usize;
    let (alphas, trackers, t) =
        run_coupled_sse(intensity, &grid.values, config, stream, |t, a| {
            if k % every.max(1) == 0 {
                path.push((t, a.to_vec()));
            }
            k += 1;
        })?;
    path.push((t, alphas.clone()));
    Ok((finish_counts(grid, alphas, trackers, t, false), path))
}

/// Single-λ SSE integrated to convergence with early censoring: once
/// α ≥ 2π(k_cap+1) the count can no longer drop below k_cap+1 (valve
/// property), so the path stops and reports the censored value k_cap+1.
/// Used for survival probabilities P(N ≤ k_cap); pass `i64::MAX` to
/// disable censoring.
pub fn solve_single_count_censored(
    intensity: &IntensitySpec,
    lambda: f64,
    k_cap: i64,
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<(i64, bool), CarouselError> {
    intensity.validate()?;
    config.validate()?;
    let t_hard = config.hard_stop(intensity, lambda);
    let t_tail = intensity.tail_time(config.epsilon_tail);
    let ceiling = if k_cap == i64::MAX {
        f64::INFINITY
    } else {
        TAU * (k_cap + 1) as f64
    };
    let mut alpha = 0.0f64;
    let mut t = 0.0;
    let mut tracker = ApproachTracker::new(config.angle_tol, config.below_margin);
    while t < t_hard {
        let f = intensity.value(t);
        let dt = config.dt_max.min(0.05 / (1.0 + lambda.abs() * f));
        let dw = stream.gaussian() * dt.sqrt();
        alpha = step_single_sse(alpha, lambda, f, dt, dw);
        t += dt;
        if alpha >= ceiling {
            return Ok((k_cap + 1, true));
        }
        tracker.update(alpha);
        if t >= t_tail && tracker.converged() {
            return Ok(((alpha / TAU).round() as i64, true));
        }
    }
    Ok(((alpha / TAU).round() as i64, false))
}

/// Single-λ SSE run at a fixed step size, reporting the approach
/// classification (used for the convergence-direction phase transition).
///
/// A path whose offset opposes the remaining drift (below its level for
/// λ > 0) is not final: the future drift inflow, total M(t) = λ ∫_t^∞ f,
/// may still carry it across. Such paths switch to the exact relative
/// offset v = (α - 2πk)/M(t), which obeys
///     dv = (β/4)(1 + v) dt + v sinc(u/2) dW,   u = v M(t),
/// and is immune to the f64 resolution floor that freezes α itself once
/// |α - 2πk| falls under ~ε·2πk. The offset run ends when
///  - v crosses 0: the drift carried the path across; the full phase
///    equation resumes (the remaining inflow may push it further);
///  - a certified bound shows v < 0 can no longer reach 0 before
///    `below_horizon` (drift exp(-2νx) for ν = β/4 - 1/2 > 0, or the
///    driftless reflection bound 2 exp(-x²/2τ), x = ln|v|): "below";
///  - t reaches `below_horizon` with v still negative: "below".
///
/// Each Brownian increment is the sum of `substeps` base draws of variance
/// dt/substeps. Runs at different step sizes sharing one replayed stream
/// therefore follow the same underlying Brownian path whenever their
/// dt/substeps agree, so step-size comparisons isolate the pure
/// discretization effect.
pub fn solve_single_approach(
    beta: f64,
    lambda: f64,
    dt: f64,
    substeps: u32,
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<(i64, bool, Approach), CarouselError> {
    let intensity = IntensitySpec::Exponential { beta };
    intensity.validate()?;
    config.validate()?;
    if !(dt > 0.0) {
        return Err(CarouselError::InvalidInput(format!("dt = {dt} must be > 0")));
    }
    if substeps == 0 {
        return Err(CarouselError::InvalidInput("substeps must be ≥ 1".into()));
    }
    let t_hard = config.hard_stop(&intensity, lambda);
    let t_tail = intensity.tail_time(config.epsilon_tail);
    // Against-drift side: for λ > 0 "below" opposes the inflow; for λ < 0
    // it is the inflow side and is settled like "above" for λ > 0.
    let against = |off: f64| off * lambda < 0.0;
    let nu = beta / 4.0 - 0.5;
    let mut alpha = 0.0f64;
    let mut t = 0.0;
    let mut tracker = ApproachTracker::new(config.angle_tol, config.below_margin);
    let sqrt_base = (dt / substeps as f64).sqrt();
    let draw = |stream: &mut RngStream| -> f64 {
        let mut s = 0.0;
        for _ in 0..substeps {
            s += stream.gaussian();
        }
        s * sqrt_base
    };
    'phase: while t < t_hard {
        let f = intensity.value(t);
        let dw = draw(stream);
        alpha = step_single_sse(alpha, lambda, f, dt, dw);
        t += dt;
        tracker.update(alpha);
        let k = (alpha / TAU).round();
        let off = alpha - TAU * k;
        if t >= t_tail && tracker.converged() {
            if !(tracker.classify() == Approach::Below && against(off)) {
                break;
            }
        }
        if tracker.classify() == Approach::Below && against(off) {
            // Offset run in units of the remaining inflow.
            let sign = if (k as i64) % 2 == 0 { 1.0 } else { -1.0 };
            // Signed remaining inflow, advanced multiplicatively per step
            // (exact decay factor for the exponential intensity).
            let mut m = lambda * intensity.tail_mass(t);
            if m == 0.0 {
                break;
            }
            let m_decay = (-beta * dt / 4.0).exp();
            let mut v = off / m;
            let mut step_count: u32 = 0;
            loop {
                if v >= 0.0 {
                    // Carried across: resume the full phase equation.
                    alpha = TAU * k + v * m;
                    tracker.update(alpha);
                    continue 'phase;
                }
                let settled = if v > -1.0 || step_count % 16 != 0 {
                    false
                } else {
                    let x = (-v).ln();
                    let tau = (config.below_horizon - t).max(0.0);
                    if x <= 0.0 {
                        false
                    } else {
                        let p_drift = if nu > 0.0 { (-2.0 * nu * x).exp() } else { 1.0 };
                        let p_reflect = if nu >= 0.0 && tau > 0.0 {
                            2.0 * (-x * x / (2.0 * tau)).exp()
                        } else if nu >= 0.0 {
                            0.0
                        } else {
                            1.0
                        };
                        p_drift.min(p_reflect) < 1e-6
                    }
                };
                if settled || t >= config.below_horizon {
                    let approach = if lambda > 0.0 { Approach::Below } else { Approach::Above };
                    return Ok((k as i64, true, approach));
                }
                let u = v * m;
                if u.abs() >= config.angle_tol {
                    // Left the tube: resume the full phase equation.
                    alpha = TAU * k + u;
                    tracker.update(alpha);
                    continue 'phase;
                }
                let dw = draw(stream);
                let half = u / 2.0;
                let sinc = if half.abs() < 1e-8 { 1.0 } else { half.sin() / half };
                // Geometric step: the homogeneous (GBM) factor of the linear
                // offset SDE is advanced exactly, so on a shared Brownian
                // path it composes identically across step sizes and only
                // the O(dt) inflow quadrature depends on the grid.
                let c = sign * sinc;
                let g = ((beta / 4.0 - c * c / 2.0) * dt + c * dw).exp();
                // Trapezoidal inflow injection: half grows through the step,
                // half lands at its end, so refining the grid leaves the
                // accumulated inflow unbiased to O(dt²).
                v = g * v + beta / 4.0 * dt * (g + 1.0) / 2.0;
                t += dt;
                m *= m_decay;
                step_count = step_count.wrapping_add(1);
            }
        }
    }
    Ok(((alpha / TAU).round() as i64, tracker.converged(), tracker.classify()))
}

/// Brownian carousel counts: hyperbolic BM B with boundary points rotating
/// around it, phases read through the Möbius transport relative to
/// z₀ = e^{i z0_angle} and lifted along a continuous branch.
pub fn carousel_counts(
    beta: f64,
    lambdas: &[f64],
    z0_angle: f64,
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<CountResult, CarouselError> {
    let intensity = IntensitySpec::Exponential { beta };
    intensity.validate()?;
    config.validate()?;
    let grid = sorted_grid(lambdas)?;
    let n = grid.values.len();
    let lambda_max = grid.values.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let t_hard = config.hard_stop(&intensity, lambda_max);
    let t_tail = intensity.tail_time(config.epsilon_tail);
    let z0 = Complex64::from_polar(1.0, z0_angle);
    let mut b = Complex64::new(0.0, 0.0);
    let mut gammas = vec![z0_angle; n];
    let mut alphas = vec![0.0f64; n];
    let mut trackers = vec![ApproachTracker::new(config.angle_tol, config.below_margin); n];
    let mut clamped = false;
    let mut t = 0.0;
    let mut g_new = vec![0.0f64; n];
    let mut a_new = vec![0.0f64; n];
    while t < t_hard {
        let f = intensity.value(t);
        let denom = 1.0 - b.norm_sqr();
        // The rotation speed factor |e^{iγ} - B|²/(1-|B|²) is ≤ 4/(1-|B|²).
        let speed_cap = 1.0 + lambda_max * f * 4.0 / denom;
        let mut dt = config.dt_max.min(0.05 / speed_cap);
        let mut accepted = false;
        for _ in 0..25 {
            let (g1, g2) = stream.gaussian_pair();
            let dz = Complex64::new(g1, g2) * dt.sqrt();
            let (b_next, cl) = step_hyperbolic_bm(b, dz);
            let mut ok = true;
            for j in 0..n {
                let e_ig = Complex64::from_polar(1.0, gammas[j]);
                let speed = f * grid.values[j] * (e_ig - b).norm_sqr() / denom;
                g_new[j] = gammas[j] + speed * dt;
                let w = disk_transport(b_next, Complex64::from_polar(1.0, g_new[j]), z0)?;
                // Continuous branch: principal increment of the transport
                // angle; a jump ≥ π/2 means the step is too coarse.
                let mut d = w.arg() - alphas[j];
                d -= TAU * (d / TAU).round();
                if d.abs() >= std::f64::consts::FRAC_PI_2 {
                    ok = false;
                    break;
                }
                a_new[j] = alphas[j] + d;
            }
            if ok {
                b = b_next;
                clamped |= cl;
                accepted = true;
                break;
            }
            dt /= 2.0;
        }
        if !accepted {
            return Err(CarouselError::StepRejected { t });
        }
        gammas.copy_from_slice(&g_new);
        alphas.copy_from_slice(&a_new);
        t += dt;
        for (tr, &a) in trackers.iter_mut().zip(&alphas) {
            tr.update(a);
        }
        if t >= t_tail && trackers.iter().all(|tr| tr.converged()) {
            break;
        }
    }
    Ok(finish_counts(grid, alphas, trackers, t, clamped))
}

/// Euler solution of the bulk relative-phase limit
///     √(1-t) dα = (λ/2) dt + √(2/β) Re((e^{-iα} - 1) dW),   α(0) = 0,
/// sampled at the requested times in [0, 1). Returns (t, α(t)) pairs.
pub fn solve_relative_phase_limit(
    beta: f64,
    lambda: f64,
    t_points: &[f64],
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<Vec<(f64, f64)>, CarouselError> {
    if !(beta > 0.0) {
        return Err(CarouselError::InvalidInput(format!("beta = {beta} must be > 0")));
    }
    if t_points.iter().any(|&t| !(0.0..1.0).contains(&t)) {
        return Err(CarouselError::InvalidInput(
            "sample times must lie in [0, 1)".into(),
        ));
    }
    config.validate()?;
    let mut pts: Vec<f64> = t_points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let coef = (2.0 / beta).sqrt();
    let mut out = Vec::with_capacity(t_points.len());
    let mut alpha = 0.0f64;
    let mut t = 0.0f64;
    for &target in &pts {
        while t < target {
            let rest = 1.0 - t;
            let dt = config.dt_max.min(0.1 * rest).min(target - t);
            let (g1, g2) = stream.gaussian_pair();
            let scale = coef / rest.sqrt();
            let dz = Complex64::new(g1, g2) * (dt.sqrt() * scale);
            let k = (alpha / TAU).round();
            let rem = alpha - TAU * k;
            let (sin_a, cos_a) = rem.sin_cos();
            alpha += lambda / (2.0 * rest.sqrt()) * dt + (cos_a - 1.0) * dz.re + sin_a * dz.im;
            t += dt;
        }
        out.push((target, alpha));
    }
    // Restore the caller's ordering.
    let mut res = Vec::with_capacity(t_points.len());
    for &tp in t_points {
        let i = pts.iter().position(|&q| q == tp).unwrap();
        res.push((tp, out[i].1));
    }
    Ok(res)
}

/// Euler solution of the limiting phase SDE (window regime ν ∈ [0, ∞]):
///     √(1-t) dφ = [λ/2 + (1/β - 1/2) √ν/(ν+1-t)] dt
///                 + √(2/β) Re(e^{-iφ} dZ) + √(2(2ν+1-t)/(β(ν+1-t))) dB,
/// φ(0) = π; for ν = ∞ the extra drift vanishes and the dB coefficient
/// is 2/√β. Returns (t, φ(t)) at the requested times in [0, 1).
pub fn solve_phase_limit_sde(
    beta: f64,
    nu: f64,
    lambda: f64,
    t_points: &[f64],
    config: &SolverConfig,
    stream: &mut RngStream,
) -> Result<Vec<(f64, f64)>, CarouselError> {
    if !(beta > 0.0) {
        return Err(CarouselError::InvalidInput(format!("beta = {beta} must be > 0")));
    }
    if !(nu >= 0.0) {
        return Err(CarouselError::InvalidInput(format!(
            "nu = {nu} must be ≥ 0 (or infinite)"
        )));
    }
    if t_points.iter().any(|&t| !(0.0..1.0).contains(&t)) {
        return Err(CarouselError::InvalidInput(
            "sample times must lie in [0, 1)".into(),
        ));
    }
    config.validate()?;
    let mut pts: Vec<f64> = t_points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(t_points.len());
    let mut phi = std::f64::consts::PI;
    let mut t = 0.0f64;
    for &target in &pts {
        while t < target {
            let rest = 1.0 - t;
            let dt = config.dt_max.min(0.1 * rest).min(target - t);
            let (extra_drift, b_coef) = if nu.is_infinite() {
                (0.0, 2.0 / beta.sqrt())
            } else {
                (
                    (1.0 / beta - 0.5) * nu.sqrt() / (nu + rest),
                    (2.0 * (2.0 * nu + rest) / (beta * (nu + rest))).sqrt(),
                )
            };
            let (g1, g2) = stream.gaussian_pair();
            let gb = stream.gaussian();
            let inv = 1.0 / rest.sqrt();
            let (sin_p, cos_p) = phi.sin_cos();
            // Re(e^{-iφ} dZ) = cos φ · dZre + sin φ · dZim.
            let noise = (2.0 / beta).sqrt() * (cos_p * g1 + sin_p * g2) + b_coef * gb;
            phi += (lambda / 2.0 + extra_drift) * inv * dt + inv * noise * dt.sqrt();
            t += dt;
        }
        out.push((target, phi));
    }
    let mut res = Vec::with_capacity(t_points.len());
    for &tp in t_points {
        let i = pts.iter().position(|&q| q == tp).unwrap();
        res.push((tp, out[i].1));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_intensity_norms() {
        let f = IntensitySpec::Exponential { beta: 2.0 };
        assert!((f.l1_norm() - 1.0).abs() < 1e-12);
        assert!((f.l2_norm_squared() - 0.25).abs() < 1e-12);
        assert!((f.tail_mass(2.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((f.value(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tabulated_intensity_matches_trapezoid() {
        let f = IntensitySpec::Tabulated {
            times: vec![0.0, 1.0, 3.0],
            values: vec![2.0, 1.0, 0.0],
        };
        f.validate().unwrap();
        assert!((f.l1_norm() - 2.5).abs() < 1e-12);
        assert!((f.value(0.5) - 1.5).abs() < 1e-12);
        assert!((f.value(2.0) - 0.5).abs() < 1e-12);
        assert_eq!(f.value(5.0), 0.0);
        assert!((f.tail_mass(2.0) - 0.25).abs() < 1e-12);
        // ∫ f² = ∫₀¹ (2-t)² + ∫₁³ ((3-t)/2)² = 7/3 + 2/3 = 3.
        assert!((f.l2_norm_squared() - 3.0).abs() < 1e-12);
        let bad = IntensitySpec::Tabulated {
            times: vec![0.0, 0.0],
            values: vec![1.0, 1.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_vanishes_exactly_on_lattice() {
        assert_eq!(noise_coefficient(0.0), 0.0);
        for k in [-3i64, 1, 2, 7] {
            assert_eq!(noise_coefficient(TAU * k as f64), 0.0);
        }
        // Pure drift at the lattice, exactly.
        let a = TAU * 4.0;
        assert_eq!(step_single_sse(a, 3.0, 0.5, 1e-3, 0.123), a + 3.0 * 0.5 * 1e-3);
        // Sign agrees with 2 sin(α/2) off the lattice.
        for &alpha in &[0.3, -0.7, 5.9, 13.0, -20.0] {
            let got = noise_coefficient(alpha);
            let want = 2.0 * (alpha / 2.0).sin();
            assert!((got - want).abs() < 1e-12, "{alpha}");
        }
    }

    #[test]
    fn coupled_zero_lambda_is_exactly_frozen() {
        let mut alphas = vec![-0.4, 0.0, 1.7];
        let lambdas = [-1.0, 0.0, 2.0];
        let mut stream = RngStream::new(5, 5);
        for i in 0..5000 {
            let dz = Complex64::new(stream.gaussian(), stream.gaussian()) * 0.03;
            step_coupled_sse(&mut alphas, &lambdas, 0.4, 1e-3, dz);
            assert_eq!(alphas[1], 0.0, "step {i}");
        }
    }

    #[test]
    fn solve_counts_basics() {
        let intensity = IntensitySpec::Exponential { beta: 2.0 };
        let config = SolverConfig::default();
        let mut stream = RngStream::new(99, 17);
        let lambdas = [8.0, -4.0, 0.0, 4.0];
        let r = solve_counts(&intensity, &lambdas, &config, &mut stream).unwrap();
        assert_eq!(r.counts.len(), 4);
        assert_eq!(r.counts[2], 0);
        assert!(r.counts[1] <= r.counts[3] && r.counts[3] <= r.counts[0]);
        assert!(r.counts[1] <= 0 && r.counts[3] >= 0);
        assert!(r.monotone);
        assert!(r.converged.iter().all(|&c| c));
        // Determinism for a fixed stream.
        let mut stream2 = RngStream::new(99, 17);
        let r2 = solve_counts(&intensity, &lambdas, &config, &mut stream2).unwrap();
        assert_eq!(r.counts, r2.counts);
        assert_eq!(r.final_alphas, r2.final_alphas);
    }

    #[test]
    fn censored_single_count_agrees_with_uncensored_survival() {
        // For paths that never reach the ceiling, censored == plain count.
        let intensity = IntensitySpec::Exponential { beta: 2.0 };
        let config = SolverConfig::default();
        for i in 0..20u64 {
            let mut s1 = RngStream::new(7000, i);
            let mut s2 = RngStream::new(7000, i);
            let (n_plain, c1) =
                solve_single_count_censored(&intensity, 5.0, i64::MAX, &config, &mut s1).unwrap();
            let (n_cens, c2) =
                solve_single_count_censored(&intensity, 5.0, 0, &config, &mut s2).unwrap();
            assert!(c1 && c2);
            if n_plain == 0 {
                assert_eq!(n_cens, 0, "path {i}");
            } else {
                assert!(n_cens >= 1, "path {i}");
            }
        }
    }

    #[test]
    fn tracker_matches_offline_classifier() {
        let intensity = IntensitySpec::Exponential { beta: 2.0 };
        let config = SolverConfig::default();
        for i in 0..30u64 {
            let mut stream = RngStream::new(321, i);
            let (res, path) =
                solve_counts_recording(&intensity, &[5.0], &config, &mut stream, 1).unwrap();
            // Column of the sorted grid holding λ = 5 (grid is {0, 5}).
            let col = res.lambdas.iter().position(|&l| l == 5.0).unwrap();
            let single: Vec<(f64, f64)> = path.iter().map(|(t, a)| (*t, a[col])).collect();
            let offline = classify_approach(&single, config.angle_tol, config.below_margin);
            assert_eq!(res.approaches[0], offline, "path {i}");
        }
    }

    #[test]
    fn carousel_zero_lambda_exact_and_deterministic() {
        let config = SolverConfig {
            t_hard_max: Some(3.0),
            ..Default::default()
        };
        let mut stream = RngStream::new(77, 3);
        let r = carousel_counts(2.0, &[0.0, 3.0], std::f64::consts::PI, &config, &mut stream)
            .unwrap();
        assert_eq!(r.final_alphas[0], 0.0);
        assert_eq!(r.counts[0], 0);
        let mut stream2 = RngStream::new(77, 3);
        let r2 = carousel_counts(2.0, &[0.0, 3.0], std::f64::consts::PI, &config, &mut stream2)
            .unwrap();
        assert_eq!(r.final_alphas, r2.final_alphas);
    }

    #[test]
    fn hyperbolic_bm_stays_in_disk() {
        let mut b = Complex64::new(0.0, 0.0);
        let mut stream = RngStream::new(13, 13);
        let mut any_clamp = false;
        for _ in 0..200_000 {
            let dz = Complex64::new(stream.gaussian(), stream.gaussian()) * 0.03;
            let (nb, cl) = step_hyperbolic_bm(b, dz);
            b = nb;
            any_clamp |= cl;
            assert!(b.norm() <= 1.0 - 1e-9 + 1e-15);
        }
        // Giant step must clamp.
        let (_, cl) = step_hyperbolic_bm(Complex64::new(0.0, 0.0), Complex64::new(5.0, 0.0));
        assert!(cl || any_clamp);
    }

    #[test]
    fn limit_sde_basic_shape() {
        let config = SolverConfig::default();
        let mut stream = RngStream::new(8, 8);
        let pts = [0.25, 0.5, 0.75];
        let path = solve_relative_phase_limit(2.0, 4.0, &pts, &config, &mut stream).unwrap();
        assert_eq!(path.len(), 3);
        assert!(path.iter().all(|(_, a)| a.is_finite()));
        let mut stream2 = RngStream::new(8, 8);
        let path2 = solve_relative_phase_limit(2.0, 4.0, &pts, &config, &mut stream2).unwrap();
        assert_eq!(path, path2);
        assert!(
            solve_relative_phase_limit(2.0, 4.0, &[1.0], &config, &mut stream).is_err()
        );
        // φ SDE starts at π and runs for any ν including ∞.
        let p = solve_phase_limit_sde(2.0, f64::INFINITY, 1.0, &[0.5], &config, &mut stream)
            .unwrap();
        assert!(p[0].1.is_finite());
        let q = solve_phase_limit_sde(2.0, 1.5, 1.0, &[0.5], &config, &mut stream).unwrap();
        assert!(q[0].1.is_finite());
        assert!(solve_phase_limit_sde(0.0, 1.0, 1.0, &[0.5], &config, &mut stream).is_err());
    }

    #[test]
    fn classifier_edge_cases() {
        let tol = 0.05;
        let margin = 1e-3;
        // Approach from above.
        let above: Vec<(f64, f64)> = (0..100)
            .map(|i| (i as f64, TAU + 0.04 * (-(i as f64) / 10.0).exp()))
            .collect();
        assert_eq!(classify_approach(&above, tol, margin), Approach::Above);
        // Approach from below.
        let below: Vec<(f64, f64)> = (0..100)
            .map(|i| (i as f64, TAU - 0.04 * (-(i as f64) / 10.0).exp()))
            .collect();
        assert_eq!(classify_approach(&below, tol, margin), Approach::Below);
        // Oscillating through the level: undecided.
        let mixed: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let x = i as f64;
                (x, TAU + 0.03 * (-(x) / 30.0).exp() * (x).cos())
            })
            .collect();
        assert_eq!(classify_approach(&mixed, tol, margin), Approach::Undecided);
        // Not converged: far from lattice.
        let far = vec![(0.0, 0.0), (1.0, 3.0)];
        assert_eq!(classify_approach(&far, tol, margin), Approach::Undecided);
    }
}
