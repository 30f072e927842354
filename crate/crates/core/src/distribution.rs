//! Discrete distribution estimation: empirical pmfs from raw categorical
//! samples, and smoothing over a DAG-ordered support.
//!
//! The smoothing step never renormalizes or clips. The solver keeps the sum
//! and the range of its input, so a pmf in means a pmf out; a violation
//! beyond tolerance is a solver bug and surfaces as
//! [`DistributionError::ProbabilityContractViolated`].

use crate::graph::Dag;
use crate::solver::{
    self, FusedPartition, KktReport, PenaltyConfig, Signal, SolveResult, SolverConfig,
    SolverError, DEFAULT_FUSE_TOL, DEFAULT_KKT_TOL,
};
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

/// Tolerance for the sum and range checks on smoothed pmfs.
pub const PROBABILITY_CONTRACT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("sample is empty")]
    EmptySample,
    #[error("outcome {outcome} at position {position} is outside 0..{n_vertices}")]
    OutcomeOutOfRange {
        position: usize,
        outcome: usize,
        n_vertices: usize,
    },
    #[error(
        "smoothed pmf violates the probability contract (sum gap {sum_gap:.3e}, range gap {range_gap:.3e}); this indicates a solver bug"
    )]
    ProbabilityContractViolated { sum_gap: f64, range_gap: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Raw categorical observations: one vertex id per draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalSample {
    outcomes: Vec<usize>,
}

impl CategoricalSample {
    pub fn new(outcomes: Vec<usize>) -> Self {
        CategoricalSample { outcomes }
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }
}

/// Empirical pmf over `n_vertices` cells: `count(i) / n`.
pub fn empirical_pmf(
    sample: &CategoricalSample,
    n_vertices: usize,
) -> Result<Signal, DistributionError> {
    if sample.n() == 0 {
        return Err(DistributionError::EmptySample);
    }
    let mut counts = vec![0u64; n_vertices];
    for (position, &outcome) in sample.outcomes().iter().enumerate() {
        if outcome >= n_vertices {
            return Err(DistributionError::OutcomeOutOfRange {
                position,
                outcome,
                n_vertices,
            });
        }
        counts[outcome] += 1;
    }
    let n = sample.n() as f64;
    Ok(Signal::new(counts.iter().map(|&c| c as f64 / n).collect())?)
}

/// A smoothed histogram: the full solve diagnostics, the fused regions of
/// the fit, and its KKT certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedHistogram {
    pub result: SolveResult,
    pub regions: FusedPartition,
    pub certificate: KktReport,
}

impl SmoothedHistogram {
    pub fn pmf(&self) -> &Signal {
        &self.result.beta
    }
}

/// Full pipeline: empirical pmf, smoothing solve, fused-region extraction,
/// KKT certificate, and the probability-contract assertion (sum within
/// tolerance of 1, entries inside the empirical pmf's range).
pub fn smooth_histogram(
    sample: &CategoricalSample,
    dag: &Dag,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<SmoothedHistogram, DistributionError> {
    let pmf = empirical_pmf(sample, dag.n_vertices())?;
    let result = solver::solve(&pmf, dag, pen, cfg)?;
    let regions = extract_checked(&result, dag)?;
    let certificate = solver::kkt_certificate(&pmf, dag, pen, &result, DEFAULT_KKT_TOL)?;

    let sum_gap = (result.beta.sum() - 1.0).abs();
    let lo = pmf.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pmf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range_gap = result
        .beta
        .iter()
        .fold(0.0f64, |acc, &b| acc.max(lo - b).max(b - hi));
    if sum_gap > PROBABILITY_CONTRACT_TOL || range_gap > PROBABILITY_CONTRACT_TOL {
        return Err(DistributionError::ProbabilityContractViolated { sum_gap, range_gap });
    }
    Ok(SmoothedHistogram {
        result,
        regions,
        certificate,
    })
}

fn extract_checked(result: &SolveResult, dag: &Dag) -> Result<FusedPartition, DistributionError> {
    Ok(solver::extract_fused_regions(
        &result.beta,
        dag,
        DEFAULT_FUSE_TOL,
    )?)
}
