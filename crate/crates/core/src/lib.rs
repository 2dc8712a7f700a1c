//! Numerical laboratory for bulk eigenvalue statistics of β-ensembles.
//!
//! The crate connects three models of the same point process and provides
//! the statistics to compare them:
//! * `ensemble` — tridiagonal β-ensemble matrices, Sturm counting, and the
//!   phase-function (winding) representation of the spectrum;
//! * `carousel` — the stochastic sine equation and the Brownian carousel,
//!   whose counting functions are the bulk (Sine_β) limit of the above,
//!   plus the limiting phase SDEs;
//! * `hyperbolic` — the Möbius/angular-shift geometry both are built on;
//! * `pointstats` — gap probabilities, tail and Lipschitz checks, KS and
//!   Wasserstein two-sample comparisons;
//! * `mcharness` — reproducible parallel Monte Carlo with keyed per-path
//!   RNG streams and deterministic aggregation;
//! * `cli` — the command-line surface.

pub mod carousel;
pub mod cli;
pub mod ensemble;
pub mod hyperbolic;
pub mod mcharness;
pub mod pointstats;
