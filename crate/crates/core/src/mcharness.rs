//! Reproducible parallel Monte Carlo: keyed per-path RNG streams,
//! experiment descriptions, deterministic aggregation, JSON persistence.
//!
//! Determinism contract: (experiment, master_seed, n_paths) fully
//! determines every number in a RunSummary, for any worker count.
//! Path simulations are independent (stream keyed by path index);
//! integer tallies are order-free and floating-point aggregates are
//! reduced sequentially in ascending path-index order with compensated
//! summation.

use crate::carousel::{
    carousel_counts, solve_counts, solve_phase_limit_sde, solve_single_approach,
    solve_single_count_censored, Approach, IntensitySpec, SolverConfig,
};
use crate::ensemble::{scaled_counting_sample, EnsembleParams};
use crate::pointstats::{ks_from_histograms, mean_stderr};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = "sinebeta-0.1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("{errored} of {n_paths} paths errored (> 1% budget); first error: {first}")]
    TooManyErrors {
        errored: u64,
        n_paths: u64,
        first: String,
    },
    #[error("schema version mismatch: file has {found}, this build reads {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Deterministic per-path random stream: ChaCha8 keyed by a splitmix64
/// hash of (master_seed, path_index). Distinct pairs give independent,
/// non-overlapping streams; the same pair replays identically regardless
/// of scheduling.
/// Cloning replays the stream from its current state (used to drive
/// several discretizations of one path with the same underlying noise).
#[derive(Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    spare_gaussian: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        let mut state = master_seed ^ path_index.wrapping_mul(0xD1B54A32D192ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            rng: ChaCha8Rng::from_seed(key),
            spare_gaussian: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard Gaussian via polar rejection (Marsaglia); the pair's
    /// second value is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare_gaussian = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        (self.gaussian(), self.gaussian())
    }

    /// Gamma(shape, scale 1) via Marsaglia–Tsang, with the power boost
    /// for shape < 1.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape {shape}");
        if shape < 1.0 {
            let u = loop {
                let u = self.uniform();
                if u > 0.0 {
                    break u;
                }
            };
            return self.gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = self.gaussian();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.uniform();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// χ²_df = 2 · Gamma(df/2).
    pub fn chi_squared(&mut self, df: f64) -> f64 {
        2.0 * self.gamma(df / 2.0)
    }

    /// χ_df = √(χ²_df).
    pub fn chi(&mut self, df: f64) -> f64 {
        self.chi_squared(df).sqrt()
    }
}

/// Canonical float rendering for cell keys (shortest round-trip form,
/// always with a decimal point for integral values).
pub fn fmt_f64(v: f64) -> String {
    // Shortest round-trip decimal form; stable across runs.
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    format!("{v}")
}

/// Experiment descriptions. `nu: None` means ν = ∞ in `limit-sde`
/// (JSON has no literal infinity).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    BulkCounts {
        n: usize,
        beta: f64,
        mu: f64,
        lambdas: Vec<f64>,
    },
    SineCounts {
        beta: f64,
        lambdas: Vec<f64>,
    },
    CarouselCounts {
        beta: f64,
        lambdas: Vec<f64>,
        z0_angle: f64,
    },
    GapProb {
        beta: f64,
        lambdas: Vec<f64>,
        k: i64,
    },
    PhaseTransition {
        beta: f64,
        lambda: f64,
        dts: Vec<f64>,
    },
    LimitSde {
        beta: f64,
        nu: Option<f64>,
        lambda: f64,
        t_points: Vec<f64>,
    },
    Compare {
        file_a: String,
        file_b: String,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::BulkCounts { .. } => "bulk-counts",
            Experiment::SineCounts { .. } => "sine-counts",
            Experiment::CarouselCounts { .. } => "carousel-counts",
            Experiment::GapProb { .. } => "gap-prob",
            Experiment::PhaseTransition { .. } => "phase-transition",
            Experiment::LimitSde { .. } => "limit-sde",
            Experiment::Compare { .. } => "compare",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JobSpec {
    pub experiment: Experiment,
    pub master_seed: u64,
    pub n_paths: u64,
    /// 0 = leave the choice to the runtime.
    pub workers: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidJob(m));
        if self.n_paths < 1 {
            return bad("n_paths must be ≥ 1".into());
        }
        self.solver
            .validate()
            .map_err(|e| HarnessError::InvalidJob(e.to_string()))?;
        let finite = |xs: &[f64], what: &str| -> Result<(), HarnessError> {
            if xs.is_empty() {
                return Err(HarnessError::InvalidJob(format!("{what} must be nonempty")));
            }
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(HarnessError::InvalidJob(format!("{what} must be finite")));
            }
            Ok(())
        };
        match &self.experiment {
            Experiment::BulkCounts { n, beta, mu, lambdas } => {
                EnsembleParams {
                    n: *n,
                    beta: *beta,
                    mu: *mu,
                }
                .validate()
                .map_err(|e| HarnessError::InvalidJob(e.to_string()))?;
                finite(lambdas, "lambdas")?;
            }
            Experiment::SineCounts { beta, lambdas } => {
                if !(*beta > 0.0) {
                    return bad(format!("beta = {beta} must be > 0"));
                }
                finite(lambdas, "lambdas")?;
            }
            Experiment::CarouselCounts { beta, lambdas, z0_angle } => {
                if !(*beta > 0.0) {
                    return bad(format!("beta = {beta} must be > 0"));
                }
                if !z0_angle.is_finite() {
                    return bad("z0_angle must be finite".into());
                }
                finite(lambdas, "lambdas")?;
            }
            Experiment::GapProb { beta, lambdas, k } => {
                if !(*beta > 0.0) {
                    return bad(format!("beta = {beta} must be > 0"));
                }
                if *k < 0 {
                    return bad(format!("k = {k} must be ≥ 0"));
                }
                finite(lambdas, "lambdas")?;
            }
            Experiment::PhaseTransition { beta, lambda, dts } => {
                if !(*beta > 0.0) {
                    return bad(format!("beta = {beta} must be > 0"));
                }
                if !lambda.is_finite() {
                    return bad("lambda must be finite".into());
                }
                finite(dts, "dts")?;
                if dts.iter().any(|d| !(*d > 0.0)) {
                    return bad("dts must be positive".into());
                }
            }
            Experiment::LimitSde { beta, nu, lambda, t_points } => {
                if !(*beta > 0.0) {
                    return bad(format!("beta = {beta} must be > 0"));
                }
                if let Some(nu) = nu {
                    if !(*nu >= 0.0) {
                        return bad(format!("nu = {nu} must be ≥ 0"));
                    }
                }
                if !lambda.is_finite() {
                    return bad("lambda must be finite".into());
                }
                finite(t_points, "t_points")?;
                if t_points.iter().any(|t| !(0.0..1.0).contains(t)) {
                    return bad("t_points must lie in [0, 1)".into());
                }
            }
            Experiment::Compare { file_a, file_b } => {
                if file_a.is_empty() || file_b.is_empty() {
                    return bad("compare needs two file paths".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Cell {
    pub key: String,
    pub mean: f64,
    pub stderr: f64,
    /// Empirical distribution for integer-valued cells; empty otherwise.
    pub histogram: BTreeMap<i64, u64>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct Flags {
    pub unconverged: u64,
    pub clamped: u64,
    pub errored: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: String,
    pub params: serde_json::Value,
    pub master_seed: u64,
    pub n_paths: u64,
    pub cells: Vec<Cell>,
    pub flags: Flags,
    pub wall_seconds: f64,
    pub artifact_version: String,
}

impl RunSummary {
    /// Reconstructs the per-λ integer sample from a cell histogram
    /// (order-free information only, which is all a histogram retains).
    pub fn cell_samples(&self, key: &str) -> Option<Vec<i64>> {
        let cell = self.cells.iter().find(|c| c.key == key)?;
        let mut out = Vec::new();
        for (&v, &n) in &cell.histogram {
            out.extend(std::iter::repeat(v).take(n as usize));
        }
        Some(out)
    }
}

/// Per-path result handed back by an experiment closure.
struct PathValues {
    values: Vec<f64>,
    unconverged: bool,
    clamped: bool,
}

type PathResult = Result<PathValues, String>;

fn aggregate(
    job: &JobSpec,
    keys: Vec<String>,
    integer_cells: bool,
    results: Vec<PathResult>,
    started: Instant,
) -> Result<RunSummary, HarnessError> {
    let n_paths = job.n_paths;
    let mut flags = Flags::default();
    let mut first_err = String::new();
    for r in &results {
        match r {
            Ok(p) => {
                if p.unconverged {
                    flags.unconverged += 1;
                }
                if p.clamped {
                    flags.clamped += 1;
                }
            }
            Err(e) => {
                if flags.errored == 0 {
                    first_err = e.clone();
                }
                flags.errored += 1;
            }
        }
    }
    if flags.errored as f64 > 0.01 * n_paths as f64 {
        return Err(HarnessError::TooManyErrors {
            errored: flags.errored,
            n_paths,
            first: first_err,
        });
    }
    let mut cells = Vec::with_capacity(keys.len());
    for (j, key) in keys.into_iter().enumerate() {
        // Ascending path order; results is index-ordered by construction.
        let column: Vec<f64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|p| p.values[j])
            .collect();
        let (mean, stderr) = mean_stderr(&column);
        let mut histogram = BTreeMap::new();
        if integer_cells {
            for &v in &column {
                *histogram.entry(v.round() as i64).or_insert(0u64) += 1;
            }
        }
        cells.push(Cell {
            key,
            mean,
            stderr: if stderr.is_nan() { 0.0 } else { stderr },
            histogram,
        });
    }
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        experiment: job.experiment.kind().to_string(),
        params: serde_json::to_value(&job.experiment)?,
        master_seed: job.master_seed,
        n_paths,
        cells,
        flags,
        wall_seconds: started.elapsed().as_secs_f64(),
        artifact_version: ARTIFACT_VERSION.to_string(),
    })
}

fn run_paths<F>(
    job: &JobSpec,
    keys: Vec<String>,
    integer_cells: bool,
    per_path: F,
) -> Result<RunSummary, HarnessError>
where
    F: Fn(&mut RngStream) -> PathResult + Sync,
{
    let started = Instant::now();
    let run = |i: u64| {
        let mut stream = RngStream::new(job.master_seed, i);
        per_path(&mut stream)
    };
    let results: Vec<PathResult> = if job.workers == 1 {
        (0..job.n_paths).map(run).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if job.workers > 0 {
            builder = builder.num_threads(job.workers);
        }
        let pool = builder
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        pool.install(|| (0..job.n_paths).into_par_iter().map(run).collect())
    };
    aggregate(job, keys, integer_cells, results, started)
}

/// Executes a job: n_paths independent simulations, deterministic
/// aggregation into per-cell means, standard errors, and integer
/// histograms. Fails only on invalid input or a > 1% path error rate.
pub fn run_job(job: &JobSpec) -> Result<RunSummary, HarnessError> {
    job.validate()?;
    match job.experiment.clone() {
        Experiment::BulkCounts { n, beta, mu, lambdas } => {
            let params = EnsembleParams { n, beta, mu };
            let keys = lambdas.iter().map(|l| format!("lambda={}", fmt_f64(*l))).collect();
            run_paths(job, keys, true, move |stream| {
                let cs = scaled_counting_sample(&params, stream, &lambdas)
                    .map_err(|e| e.to_string())?;
                Ok(PathValues {
                    values: cs.counts.iter().map(|&c| c as f64).collect(),
                    unconverged: false,
                    clamped: false,
                })
            })
        }
        Experiment::SineCounts { beta, lambdas } => {
            let intensity = IntensitySpec::Exponential { beta };
            let solver = job.solver;
            let keys = lambdas.iter().map(|l| format!("lambda={}", fmt_f64(*l))).collect();
            run_paths(job, keys, true, move |stream| {
                let r = solve_counts(&intensity, &lambdas, &solver, stream)
                    .map_err(|e| e.to_string())?;
                Ok(PathValues {
                    values: r.counts.iter().map(|&c| c as f64).collect(),
                    unconverged: r.converged.iter().any(|&c| !c) || !r.monotone,
                    clamped: r.clamped,
                })
            })
        }
        Experiment::CarouselCounts { beta, lambdas, z0_angle } => {
            let solver = job.solver;
            let keys = lambdas.iter().map(|l| format!("lambda={}", fmt_f64(*l))).collect();
            run_paths(job, keys, true, move |stream| {
                let r = carousel_counts(beta, &lambdas, z0_angle, &solver, stream)
                    .map_err(|e| e.to_string())?;
                Ok(PathValues {
                    values: r.counts.iter().map(|&c| c as f64).collect(),
                    unconverged: r.converged.iter().any(|&c| !c) || !r.monotone,
                    clamped: r.clamped,
                })
            })
        }
        Experiment::GapProb { beta, lambdas, k } => {
            let intensity = IntensitySpec::Exponential { beta };
            let solver = job.solver;
            let keys = lambdas.iter().map(|l| format!("lambda={}", fmt_f64(*l))).collect();
            // Counts are censored at k+1: paths stop as soon as the phase
            // passes 2π(k+1), which cannot un-happen (valve property).
            // Only P(N ≤ k) is meaningful downstream.
            run_paths(job, keys, true, move |stream| {
                let mut values = Vec::with_capacity(lambdas.len());
                let mut unconverged = false;
                for &lam in &lambdas {
                    let (count, converged) =
                        solve_single_count_censored(&intensity, lam, k, &solver, stream)
                            .map_err(|e| e.to_string())?;
                    unconverged |= !converged;
                    values.push(count as f64);
                }
                Ok(PathValues {
                    values,
                    unconverged,
                    clamped: false,
                })
            })
        }
        Experiment::PhaseTransition { beta, lambda, dts } => {
            let solver = job.solver;
            let mut keys = Vec::new();
            for dt in &dts {
                for dir in ["above", "below", "undecided"] {
                    keys.push(format!("dt={}:{}", fmt_f64(*dt), dir));
                }
            }
            // All step sizes of one path ride the same Brownian path: each
            // run replays the path's stream and sums dt/dt_min base draws
            // per step, so comparisons across dt isolate the pure
            // discretization effect.
            let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut substeps = Vec::with_capacity(dts.len());
            for &dt in &dts {
                let ratio = dt / dt_min;
                if !((ratio - ratio.round()).abs() < 1e-9 && ratio >= 1.0) {
                    return Err(HarnessError::InvalidJob(format!(
                        "dt list entries must be integer multiples of the smallest dt, got {dt} vs {dt_min}"
                    )));
                }
                substeps.push(ratio.round() as u32);
            }
            run_paths(job, keys, true, move |stream| {
                let base = stream.clone();
                let mut values = Vec::with_capacity(3 * dts.len());
                let mut unconverged = false;
                for (&dt, &sub) in dts.iter().zip(&substeps) {
                    let mut replay = base.clone();
                    let (_, converged, approach) =
                        solve_single_approach(beta, lambda, dt, sub, &solver, &mut replay)
                            .map_err(|e| e.to_string())?;
                    unconverged |= !converged;
                    values.push((approach == Approach::Above) as i64 as f64);
                    values.push((approach == Approach::Below) as i64 as f64);
                    values.push((approach == Approach::Undecided) as i64 as f64);
                }
                Ok(PathValues {
                    values,
                    unconverged,
                    clamped: false,
                })
            })
        }
        Experiment::LimitSde { beta, nu, lambda, t_points } => {
            let solver = job.solver;
            let nu_val = nu.unwrap_or(f64::INFINITY);
            let keys = t_points.iter().map(|t| format!("t={}", fmt_f64(*t))).collect();
            run_paths(job, keys, false, move |stream| {
                let path = solve_phase_limit_sde(beta, nu_val, lambda, &t_points, &solver, stream)
                    .map_err(|e| e.to_string())?;
                Ok(PathValues {
                    values: path.iter().map(|(_, phi)| *phi).collect(),
                    unconverged: false,
                    clamped: false,
                })
            })
        }
        Experiment::Compare { file_a, file_b } => {
            let started = Instant::now();
            let a = load(Path::new(&file_a))?;
            let b = load(Path::new(&file_b))?;
            let mut cells = Vec::new();
            for ca in &a.cells {
                let Some(cb) = b.cells.iter().find(|c| c.key == ca.key) else {
                    continue;
                };
                if ca.histogram.is_empty() || cb.histogram.is_empty() {
                    continue;
                }
                let ks = ks_from_histograms(&ca.histogram, &cb.histogram);
                cells.push(Cell {
                    key: format!("{}:ks", ca.key),
                    mean: ks,
                    stderr: 0.0,
                    histogram: BTreeMap::new(),
                });
                cells.push(Cell {
                    key: format!("{}:mean_gap", ca.key),
                    mean: ca.mean - cb.mean,
                    stderr: (ca.stderr * ca.stderr + cb.stderr * cb.stderr).sqrt(),
                    histogram: BTreeMap::new(),
                });
            }
            if cells.is_empty() {
                return Err(HarnessError::InvalidJob(
                    "compare: no common histogram cells between the two files".into(),
                ));
            }
            Ok(RunSummary {
                schema_version: SCHEMA_VERSION,
                experiment: "compare".to_string(),
                params: serde_json::to_value(&job.experiment)?,
                master_seed: job.master_seed,
                n_paths: job.n_paths,
                cells,
                flags: Flags::default(),
                wall_seconds: started.elapsed().as_secs_f64(),
                artifact_version: ARTIFACT_VERSION.to_string(),
            })
        }
    }
}

/// Writes a summary as a single pretty-printed JSON document. Field and
/// histogram-key order are fixed, so equal summaries persist as equal
/// bytes.
pub fn persist(summary: &RunSummary, path: &Path) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RunSummary, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    // Pull out the version first for an explicit mismatch message.
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(v) = probe.get("schema_version").and_then(|v| v.as_u64()) {
        if v != SCHEMA_VERSION as u64 {
            return Err(HarnessError::SchemaMismatch {
                found: v as u32,
                expected: SCHEMA_VERSION,
            });
        }
    }
    Ok(serde_json::from_value(probe)?)
}
