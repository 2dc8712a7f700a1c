//! Command-line surface: every experiment as a subcommand with bit-stable
//! JSON/CSV output.

use crate::carousel::{step_coupled_sse, SolverConfig};
use crate::ensemble::{
    phase_count_below, regularized_phase_run, sample_tridiagonal, valve_check, ConjugatedModel,
    EnsembleParams,
};
use crate::hyperbolic::{angular_shift, angular_shift_alternate, lifted_apply_affine, MobiusMap};
use crate::mcharness::{fmt_f64, persist, run_job, Experiment, JobSpec, RngStream, RunSummary};
use crate::pointstats::{gap_probability, gap_slope_fit, EmpiricalCounts};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "sinebeta",
    about = "Monte Carlo laboratory for bulk eigenvalue statistics of beta-ensembles, \
             the stochastic sine equation, and the Brownian carousel",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Master seed; with --paths it determines every output number.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true, default_value_t = 1000)]
    pub paths: u64,
    /// Worker threads (0 = runtime default; SINE_BETA_THREADS caps it).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Suppress progress chatter (never data).
    #[arg(long, global = true, default_value_t = false)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit one sampled tridiagonal matrix as CSV (row, diag, offdiag).
    SampleEnsemble {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// Emit the conjugated model (row, x, y, s) instead.
        #[arg(long, default_value_t = false)]
        conjugated: bool,
    },
    /// Finite-n scaled eigenvalue counting samples.
    BulkCounts {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// Grid `a:b:step` or comma list.
        #[arg(long)]
        lambdas: String,
    },
    /// Counting samples of the stochastic sine equation (Sine_beta).
    SineCounts {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambdas: String,
    },
    /// Counting samples of the Brownian carousel.
    CarouselCounts {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambdas: String,
        /// Boundary angle of the transport reference point z0.
        #[arg(long, default_value_t = PI)]
        z0: f64,
    },
    /// Gap probabilities P(N <= k) with a slope fit of -log p vs lambda^2.
    GapProb {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambda_list: String,
        #[arg(long, default_value_t = 0)]
        k: i64,
    },
    /// Approach-direction fractions per step size at fixed lambda.
    PhaseTransition {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        dt_list: String,
    },
    /// Two-sample comparison of two persisted runs.
    Compare {
        #[arg(long)]
        file_a: PathBuf,
        #[arg(long)]
        file_b: PathBuf,
    },
    /// Limiting phase SDE summary at chosen times.
    LimitSde {
        #[arg(long)]
        beta: f64,
        /// Window regime parameter; accepts `inf`.
        #[arg(long, default_value = "inf")]
        nu: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value = "0.25,0.5,0.75")]
        t_list: String,
    },
    /// Exact (non-statistical) invariant suite.
    Selftest,
}

/// Parses `a:b:step` (inclusive of both endpoints within half a step) or a
/// comma-separated list; a bare number is a one-point list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parse_one = |t: &str| -> Result<f64, String> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("not a number: '{t}'"))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid must be a:b:step, got '{s}'"));
        }
        let a = parse_one(parts[0])?;
        let b = parse_one(parts[1])?;
        let step = parse_one(parts[2])?;
        if !(step > 0.0) || !a.is_finite() || !b.is_finite() || b < a {
            return Err(format!("need a ≤ b and step > 0 in '{s}'"));
        }
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let x = a + step * k as f64;
            if x > b + step / 2.0 {
                break;
            }
            out.push(x);
            k += 1;
        }
        Ok(out)
    } else {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(parse_one)
            .collect()
    }
}

fn write_output(cli: &Cli, summary: &RunSummary) -> Result<(), String> {
    let text = match cli.format {
        OutputFormat::Json => {
            let mut t =
                serde_json::to_string_pretty(summary).map_err(|e| e.to_string())?;
            t.push('\n');
            t
        }
        OutputFormat::Csv => {
            let mut t = String::from("key,mean,stderr,histogram\n");
            for c in &summary.cells {
                let hist: Vec<String> =
                    c.histogram.iter().map(|(v, n)| format!("{v}:{n}")).collect();
                t.push_str(&format!(
                    "{},{},{},{}\n",
                    c.key,
                    c.mean,
                    c.stderr,
                    hist.join("|")
                ));
            }
            t
        }
    };
    match &cli.out {
        Some(path) => {
            if cli.format == OutputFormat::Json {
                // persist() is the canonical byte layout for JSON artifacts.
                persist(summary, path).map_err(|e| e.to_string())
            } else {
                std::fs::write(path, text).map_err(|e| e.to_string())
            }
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn job(cli: &Cli, experiment: Experiment) -> JobSpec {
    let workers = if cli.workers == 0 {
        std::env::var("SINE_BETA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    } else {
        cli.workers
    };
    JobSpec {
        experiment,
        master_seed: cli.seed,
        n_paths: cli.paths,
        workers,
        solver: SolverConfig::default(),
    }
}

fn run_and_write(cli: &Cli, experiment: Experiment) -> Result<RunSummary, ExitError> {
    let spec = job(cli, experiment);
    spec.validate().map_err(|e| ExitError::usage(e.to_string()))?;
    let summary = run_job(&spec).map_err(|e| ExitError::failure(e.to_string()))?;
    write_output(cli, &summary).map_err(ExitError::failure)?;
    Ok(summary)
}

struct ExitError {
    code: i32,
    message: String,
}

impl ExitError {
    fn usage(message: String) -> Self {
        ExitError { code: 1, message }
    }
    fn failure(message: String) -> Self {
        ExitError { code: 2, message }
    }
}

fn sample_ensemble_csv(
    cli: &Cli,
    n: usize,
    beta: f64,
    mu: f64,
    conjugated: bool,
) -> Result<(), ExitError> {
    let params = EnsembleParams { n, beta, mu };
    params
        .validate()
        .map_err(|e| ExitError::usage(e.to_string()))?;
    let mut stream = RngStream::new(cli.seed, 0);
    let m = sample_tridiagonal(&params, &mut stream);
    let mut text = String::new();
    if conjugated {
        let c = ConjugatedModel::from_matrix(&m);
        text.push_str("row,x,y,s\n");
        for i in 0..n {
            text.push_str(&format!("{},{},{},{}\n", i, c.x[i], c.y[i], c.s[i]));
        }
    } else {
        text.push_str("row,diag,offdiag\n");
        for i in 0..n {
            let off = if i + 1 < n {
                format!("{}", m.offdiag[i])
            } else {
                String::new()
            };
            text.push_str(&format!("{},{},{}\n", i, m.diag[i], off));
        }
    }
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| ExitError::failure(e.to_string())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn selftest(quiet: bool) -> Result<(), ExitError> {
    let report = |name: &str, ok: bool| -> Result<(), ExitError> {
        if !quiet {
            println!("{} {name}", if ok { "ok " } else { "FAIL" });
        }
        if ok {
            Ok(())
        } else {
            Err(ExitError::failure(format!("selftest failed: {name}")))
        }
    };

    // Angular shift: two closed forms agree; lift quasiperiodic and fixes π.
    let mut stream = RngStream::new(0x5E1F, 0);
    let mut geom_ok = true;
    for _ in 0..2000 {
        let t = loop {
            let (a, b, c, d) = (
                stream.gaussian(),
                stream.gaussian(),
                stream.gaussian(),
                stream.gaussian(),
            );
            if a * d - b * c > 1e-3 {
                break MobiusMap::new(a, b, c, d).unwrap();
            }
        };
        let v = Complex64::from_polar(1.0, stream.uniform() * 2.0 * PI);
        let w = Complex64::from_polar(1.0, stream.uniform() * 2.0 * PI);
        let x = angular_shift(&t, v, w).unwrap();
        let y = angular_shift_alternate(&t, v, w).unwrap();
        geom_ok &= (x - y).abs() <= 1e-10 && x.abs() < 2.0 * PI;
    }
    for _ in 0..200 {
        let a = stream.uniform() * 3.0 + 0.1;
        let b = stream.gaussian();
        let phi = stream.gaussian() * 5.0;
        let f0 = lifted_apply_affine(a, b, phi).unwrap();
        let f1 = lifted_apply_affine(a, b, phi + 2.0 * PI).unwrap();
        geom_ok &= (f1 - f0 - 2.0 * PI).abs() <= 1e-12;
        geom_ok &= (lifted_apply_affine(a, b, PI).unwrap() - PI).abs() <= 1e-12;
    }
    report("angular shift identity + lift quasiperiodicity", geom_ok)?;

    // Counting oracle: phase winding equals Sturm count.
    let mut count_ok = true;
    for seed in 0..5u64 {
        let params = EnsembleParams {
            n: 60,
            beta: 2.0,
            mu: 0.0,
        };
        let mut s = RngStream::new(1000 + seed, 0);
        let m = sample_tridiagonal(&params, &mut s);
        let model = ConjugatedModel::from_matrix(&m);
        for &lam in &[-4.0, -1.0, 0.0, 1.0, 4.0, 9.0] {
            count_ok &=
                phase_count_below(&model, lam).unwrap() == m.sturm_count_below(lam) as i64;
        }
    }
    report("phase winding count == Sturm count", count_ok)?;

    // Valve property on a regularized run.
    let params = EnsembleParams {
        n: 150,
        beta: 2.0,
        mu: 0.4,
    };
    let mut s = RngStream::new(2024, 1);
    let model = ConjugatedModel::sample(&params, &mut s);
    let states = regularized_phase_run(&model, &params, 3.0).unwrap();
    report("valve property of the relative phase", valve_check(&states))?;

    // λ = 0 coordinate of the coupled SSE is exactly frozen.
    let mut alphas = vec![0.0f64, 0.0];
    let lambdas = [0.0, 3.0];
    let mut frozen = true;
    for _ in 0..10_000 {
        let dz = Complex64::new(s.gaussian(), s.gaussian()) * 0.03;
        step_coupled_sse(&mut alphas, &lambdas, 0.5, 1e-3, dz);
        frozen &= alphas[0] == 0.0;
    }
    report("coupled SSE freezes the lambda=0 coordinate exactly", frozen)?;

    // Determinism: same tiny job, workers 1 vs 2, identical numbers.
    let mk = |workers| JobSpec {
        experiment: Experiment::SineCounts {
            beta: 2.0,
            lambdas: vec![2.0 * PI],
        },
        master_seed: 99,
        n_paths: 20,
        workers,
        solver: SolverConfig {
            dt_max: 5e-3,
            ..Default::default()
        },
    };
    let mut a = run_job(&mk(1)).map_err(|e| ExitError::failure(e.to_string()))?;
    let mut b = run_job(&mk(2)).map_err(|e| ExitError::failure(e.to_string()))?;
    a.wall_seconds = 0.0;
    b.wall_seconds = 0.0;
    report("worker-count independence of aggregates", a == b)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), ExitError> {
    match &cli.command {
        Command::SampleEnsemble {
            n,
            beta,
            mu,
            conjugated,
        } => sample_ensemble_csv(cli, *n, *beta, *mu, *conjugated),
        Command::BulkCounts { n, beta, mu, lambdas } => {
            let lam = parse_grid(lambdas).map_err(ExitError::usage)?;
            run_and_write(
                cli,
                Experiment::BulkCounts {
                    n: *n,
                    beta: *beta,
                    mu: *mu,
                    lambdas: lam,
                },
            )?;
            Ok(())
        }
        Command::SineCounts { beta, lambdas } => {
            let lam = parse_grid(lambdas).map_err(ExitError::usage)?;
            run_and_write(
                cli,
                Experiment::SineCounts {
                    beta: *beta,
                    lambdas: lam,
                },
            )?;
            Ok(())
        }
        Command::CarouselCounts { beta, lambdas, z0 } => {
            let lam = parse_grid(lambdas).map_err(ExitError::usage)?;
            run_and_write(
                cli,
                Experiment::CarouselCounts {
                    beta: *beta,
                    lambdas: lam,
                    z0_angle: *z0,
                },
            )?;
            Ok(())
        }
        Command::GapProb {
            beta,
            lambda_list,
            k,
        } => {
            let lam = parse_grid(lambda_list).map_err(ExitError::usage)?;
            let summary = run_and_write(
                cli,
                Experiment::GapProb {
                    beta: *beta,
                    lambdas: lam.clone(),
                    k: *k,
                },
            )?;
            // Gap estimates and the slope fit, derived from the histograms.
            let mut estimates = Vec::new();
            for &l in &lam {
                let key = format!("lambda={}", fmt_key(l));
                if let Some(samples) = summary.cell_samples(&key) {
                    let counts = EmpiricalCounts { lambda: l, samples };
                    if let Ok(g) = gap_probability(&counts, *k) {
                        estimates.push(g);
                    }
                }
            }
            let fit = gap_slope_fit(&estimates).ok();
            if !cli.quiet {
                let report = serde_json::json!({
                    "estimates": estimates,
                    "slope_fit": fit,
                });
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report)
                        .map_err(|e| ExitError::failure(e.to_string()))?
                );
            }
            Ok(())
        }
        Command::PhaseTransition {
            beta,
            lambda,
            dt_list,
        } => {
            let dts = parse_grid(dt_list).map_err(ExitError::usage)?;
            run_and_write(
                cli,
                Experiment::PhaseTransition {
                    beta: *beta,
                    lambda: *lambda,
                    dts,
                },
            )?;
            Ok(())
        }
        Command::Compare { file_a, file_b } => {
            run_and_write(
                cli,
                Experiment::Compare {
                    file_a: file_a.to_string_lossy().into_owned(),
                    file_b: file_b.to_string_lossy().into_owned(),
                },
            )?;
            Ok(())
        }
        Command::LimitSde {
            beta,
            nu,
            lambda,
            t_list,
        } => {
            let nu_val = match nu.trim() {
                "inf" | "infinity" | "Inf" => None,
                other => Some(
                    other
                        .parse::<f64>()
                        .map_err(|_| ExitError::usage(format!("bad --nu '{other}'")))?,
                ),
            };
            let t_points = parse_grid(t_list).map_err(ExitError::usage)?;
            run_and_write(
                cli,
                Experiment::LimitSde {
                    beta: *beta,
                    nu: nu_val,
                    lambda: *lambda,
                    t_points,
                },
            )?;
            Ok(())
        }
        Command::Selftest => selftest(cli.quiet),
    }
}

fn fmt_key(v: f64) -> String {
    fmt_f64(v)
}

/// Entry point used by the binary; returns the process exit code
/// (0 success, 1 validation/usage error, 2 job failure).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax_inclusive_endpoints() {
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        // Endpoint within half a step still included.
        let g = parse_grid("0:6.2832:6.2832").unwrap();
        assert_eq!(g, vec![0.0, 6.2832]);
        assert_eq!(parse_grid("1,2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("2.5").unwrap(), vec![2.5]);
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("1:2:0").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn key_formatting_matches_harness() {
        // CLI reconstructs cell keys; formats must agree with mcharness.
        assert_eq!(fmt_key(6.0), "6.0");
        assert_eq!(fmt_key(0.5), "0.5");
    }
}
