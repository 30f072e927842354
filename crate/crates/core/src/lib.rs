//! Smoothing of signals indexed by a directed acyclic graph.
//!
//! The estimator minimizes
//!
//! ```text
//! (1/2) ||y - beta||^2  +  lambda_fused * sum_e |beta_src - beta_tgt|
//!                       +  lambda_ni    * sum_e (beta_src - beta_tgt)_+
//! ```
//!
//! over all real vectors `beta`, where the sum runs over the edges of a DAG
//! encoding a partial order on the signal's support. The fused term pulls
//! neighbouring values together; the nearly-isotonic term penalizes only
//! order violations. The minimizer keeps the sum and the range of the input,
//! so a probability vector in yields a probability vector out — which makes
//! the estimator directly usable for histogram smoothing.
//!
//! Crate layout:
//!
//! - [`graph`]: DAG construction, oriented incidence matrices, connectivity.
//! - [`solver`]: the estimator itself (operator splitting with an exact
//!   elementwise proximal map), fused-region extraction, KKT certificates.
//! - [`oracle`]: slow independent references (exhaustive grid search,
//!   subgradient descent, PAVA) used to validate the solver.
//! - [`asymptotics`]: the scaled-error limit law of the smoothed estimator —
//!   exact solve of the limit problem by reduction, plus finite-sample and
//!   limit Monte Carlo with per-replicate seeding.
//! - [`distribution`]: empirical pmfs and histogram smoothing with the
//!   probability-vector contract checked, never patched.
//! - [`verify`]: seeded property suites behind the `verify` CLI subcommand
//!   and the acceptance tests.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (on by default) only switches float math to the platform intrinsics and
//! implements `std::error::Error` for the error types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod asymptotics;
pub mod distribution;
pub mod graph;
mod math;
pub mod oracle;
pub mod solver;
pub mod verify;

pub use graph::{Dag, GraphError, IncidenceMatrix};
pub use solver::{
    FusedPartition, KktReport, PenaltyConfig, Signal, SolveResult, SolverConfig, SolverError,
};
