//! Seeded verification suites for the solver's structural guarantees.
//!
//! Each suite draws a deterministic family of random instances (chains,
//! grids, diamonds, random DAGs; uniform signals; uniform penalties), runs
//! the solver at verification-grade tolerances, and reports worst-case gaps
//! plus a pass flag. The CLI `verify` subcommand and the acceptance tests
//! are both thin wrappers over these functions.

use crate::asymptotics::{self, LimitLawSpec};
use crate::distribution::{self, CategoricalSample};
use crate::graph::Dag;
use crate::math;
use crate::oracle;
use crate::solver::{self, PenaltyConfig, Signal, SolverConfig, DEFAULT_KKT_TOL};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Relative tolerance on sum preservation.
pub const SUM_TOL: f64 = 1e-8;
/// Absolute tolerance on range preservation.
pub const RANGE_TOL: f64 = 1e-8;
/// Slack allowed over the grid-oracle objective.
pub const GRID_GAP_TOL: f64 = 1e-6;
/// Relative tolerance against the subgradient-oracle objective.
pub const SUBGRADIENT_REL_TOL: f64 = 1e-6;
/// Iterations given to the subgradient oracle.
pub const SUBGRADIENT_ITERS: usize = 1_000_000;
/// Lattice step of the grid oracle.
pub const GRID_STEP: f64 = 1e-3;
/// Max-norm tolerance on the per-region decomposition of the limit solve.
pub const DECOMPOSITION_TOL: f64 = 1e-8;
/// Max-norm tolerance against PAVA in the large-penalty isotonic limit.
pub const ISOTONIC_LIMIT_TOL: f64 = 1e-3;

/// One random test instance: a DAG (chains, grids, diamonds and random DAGs
/// rotate by index), a uniform signal on `[0,1]`, and uniform penalties on
/// `[0,2]`. Vertex counts stay at or below 30.
pub fn random_instance(rng: &mut ChaCha8Rng, index: usize) -> (Dag, Signal, PenaltyConfig) {
    let dag = match index % 4 {
        0 => Dag::chain(1 + (rng.random::<u32>() % 30) as usize).expect("valid chain"),
        1 => {
            let s1 = 1 + (rng.random::<u32>() % 6) as usize;
            let s2 = 1 + (rng.random::<u32>() % (30 / s1) as u32) as usize;
            Dag::grid2d(s1, s2).expect("valid grid")
        }
        2 => Dag::from_edge_list(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]).expect("diamond"),
        _ => random_dag(rng),
    };
    let y = Signal::new((0..dag.n_vertices()).map(|_| rng.random::<f64>()).collect())
        .expect("uniform draws are finite");
    let pen = PenaltyConfig::new(2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>())
        .expect("nonnegative");
    (dag, y, pen)
}

/// Random DAG on 2..=30 vertices: edges point forward along a random
/// permutation, kept with probability tuned for about two edges per vertex.
fn random_dag(rng: &mut ChaCha8Rng) -> Dag {
    let n = 2 + (rng.random::<u32>() % 29) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    // Fisher-Yates with the suite's own stream.
    for i in (1..n).rev() {
        let j = (rng.random::<u32>() as usize) % (i + 1);
        perm.swap(i, j);
    }
    let keep = (4.0 / n as f64).min(1.0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < keep {
                edges.push((perm[i], perm[j]));
            }
        }
    }
    Dag::from_edge_list(n, edges).expect("forward edges cannot cycle")
}

/// Worst-case conservation gaps over a randomized instance family.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub instances: usize,
    /// Max of `|sum(beta) - sum(y)| / (1 + |sum(y)|)`.
    pub max_sum_gap: f64,
    /// Max excursion of any coordinate outside `[min(y), max(y)]`.
    pub max_range_violation: f64,
    pub pass: bool,
}

/// Sum and range preservation on `instances` random instances.
pub fn conservation_suite(seed: u64, instances: usize) -> ConservationReport {
    let cfg = SolverConfig::strict();
    let mut rng = asymptotics::replicate_rng(seed, 0);
    let mut max_sum_gap = 0.0f64;
    let mut max_range_violation = 0.0f64;
    for index in 0..instances {
        let (dag, y, pen) = random_instance(&mut rng, index);
        let res = solver::solve(&y, &dag, &pen, &cfg).expect("verification solve converges");
        let sum_y = y.sum();
        let rel_gap = math::abs(res.beta.sum() - sum_y) / (1.0 + math::abs(sum_y));
        max_sum_gap = max_sum_gap.max(rel_gap);
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &b in res.beta.iter() {
            max_range_violation = max_range_violation.max(lo - b).max(b - hi);
        }
    }
    ConservationReport {
        instances,
        max_sum_gap,
        max_range_violation: max_range_violation.max(0.0),
        pass: max_sum_gap <= SUM_TOL && max_range_violation <= RANGE_TOL,
    }
}

/// Worst-case certificate gaps over the same instance family as
/// [`conservation_suite`] (same seed, same instances).
#[derive(Debug, Clone, PartialEq)]
pub struct KktSuiteReport {
    pub instances: usize,
    pub tol: f64,
    pub max_stationarity_gap: f64,
    pub max_box_violation: f64,
    pub max_complementarity_violation: f64,
    pub pass: bool,
}

pub fn kkt_suite(seed: u64, instances: usize) -> KktSuiteReport {
    let cfg = SolverConfig::strict();
    let mut rng = asymptotics::replicate_rng(seed, 0);
    let mut report = KktSuiteReport {
        instances,
        tol: DEFAULT_KKT_TOL,
        max_stationarity_gap: 0.0,
        max_box_violation: 0.0,
        max_complementarity_violation: 0.0,
        pass: true,
    };
    for index in 0..instances {
        let (dag, y, pen) = random_instance(&mut rng, index);
        let res = solver::solve(&y, &dag, &pen, &cfg).expect("verification solve converges");
        let cert = solver::kkt_certificate(&y, &dag, &pen, &res, DEFAULT_KKT_TOL)
            .expect("dimensions match");
        report.max_stationarity_gap = report.max_stationarity_gap.max(cert.stationarity_gap);
        report.max_box_violation = report.max_box_violation.max(cert.box_violation);
        report.max_complementarity_violation = report
            .max_complementarity_violation
            .max(cert.complementarity_violation);
        report.pass &= cert.pass;
    }
    report
}

/// Worst-case objective gaps against the two independent oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSuiteReport {
    pub grid_instances: usize,
    pub subgradient_instances: usize,
    /// Max of `solver objective - grid objective` (may be negative).
    pub max_grid_gap: f64,
    /// Max relative objective gap against the subgradient oracle.
    pub max_subgradient_rel_gap: f64,
    pub pass: bool,
}

/// Solver vs. grid oracle on up to 3 vertices and vs. the subgradient
/// oracle on up to 10.
pub fn oracle_suite(seed: u64, grid_instances: usize, subgradient_instances: usize) -> OracleSuiteReport {
    let cfg = SolverConfig::strict();
    let mut rng = asymptotics::replicate_rng(seed, 0);
    let mut max_grid_gap = f64::NEG_INFINITY;
    for index in 0..grid_instances {
        let (dag, y, pen) = random_tiny_instance(&mut rng, index, 3);
        let res = solver::solve(&y, &dag, &pen, &cfg).expect("verification solve converges");
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * GRID_STEP;
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * GRID_STEP;
        let grid = oracle::grid_oracle(&y, &dag, &pen, lo, hi, GRID_STEP)
            .expect("at most 3 vertices");
        let f_grid = solver::objective(&y, &dag, &pen, &grid).expect("dimensions match");
        max_grid_gap = max_grid_gap.max(res.objective - f_grid);
    }
    let mut max_sub_rel_gap = 0.0f64;
    for index in 0..subgradient_instances {
        let (dag, y, pen) = random_tiny_instance(&mut rng, index, 10);
        let res = solver::solve(&y, &dag, &pen, &cfg).expect("verification solve converges");
        let sub = oracle::subgradient_oracle(&y, &dag, &pen, SUBGRADIENT_ITERS)
            .expect("dimensions match");
        let f_sub = solver::objective(&y, &dag, &pen, &sub).expect("dimensions match");
        let rel = math::abs(res.objective - f_sub) / (1.0 + math::abs(f_sub));
        max_sub_rel_gap = max_sub_rel_gap.max(rel);
    }
    OracleSuiteReport {
        grid_instances,
        subgradient_instances,
        max_grid_gap,
        max_subgradient_rel_gap: max_sub_rel_gap,
        pass: max_grid_gap <= GRID_GAP_TOL && max_sub_rel_gap <= SUBGRADIENT_REL_TOL,
    }
}

/// Like [`random_instance`] but with at most `max_n` vertices (chains and
/// random DAGs only, so tiny sizes stay interesting).
fn random_tiny_instance(
    rng: &mut ChaCha8Rng,
    index: usize,
    max_n: usize,
) -> (Dag, Signal, PenaltyConfig) {
    let n = 1 + (rng.random::<u32>() as usize) % max_n;
    let dag = if index % 2 == 0 || n < 3 {
        Dag::chain(n).expect("valid chain")
    } else {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.6 {
                    edges.push((i, j));
                }
            }
        }
        Dag::from_edge_list(n, edges).expect("forward edges cannot cycle")
    };
    let y = Signal::new((0..n).map(|_| rng.random::<f64>()).collect()).expect("finite");
    let pen = PenaltyConfig::new(2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>())
        .expect("nonnegative");
    (dag, y, pen)
}

/// Worst-case gap between the joint limit solve and concatenated per-region
/// fits, over random noise draws on two block-constant isotonic truths.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionSuiteReport {
    pub draws: usize,
    pub max_gap: f64,
    pub pass: bool,
}

pub fn decomposition_suite(seed: u64, draws_per_case: usize) -> DecompositionSuiteReport {
    let cfg = SolverConfig::strict();
    let cases: [(Dag, Vec<f64>); 2] = [
        (
            Dag::chain(6).expect("valid chain"),
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        ),
        (
            // 2 x 3 grid, flat block {0,1,3} at 0 and {2,4,5} at 1 —
            // isotonic for the componentwise order.
            Dag::grid2d(2, 3).expect("valid grid"),
            vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        ),
    ];
    let mut max_gap = 0.0f64;
    let mut draws = 0;
    for (case_index, (dag, truth)) in cases.iter().enumerate() {
        // The truth here is a signal level, not a pmf; sample noise from a
        // uniform pmf of matching dimension instead.
        let uniform = Signal::new(vec![1.0 / dag.n_vertices() as f64; dag.n_vertices()])
            .expect("finite");
        let spec = LimitLawSpec::new(
            Signal::new(truth.clone()).expect("finite"),
            0.0,
            1.0,
            0.5,
        )
        .expect("valid spec");
        for r in 0..draws_per_case {
            let mut rng = asymptotics::replicate_rng(seed, (case_index * draws_per_case + r) as u64);
            let noise = asymptotics::sample_multinomial_noise(&uniform, &mut rng)
                .expect("uniform pmf is valid");
            let report = asymptotics::decomposition_check(&noise, &spec, dag, &cfg)
                .expect("preconditions hold");
            max_gap = max_gap.max(report.max_gap);
            draws += 1;
        }
    }
    DecompositionSuiteReport {
        draws,
        max_gap,
        pass: max_gap <= DECOMPOSITION_TOL,
    }
}

/// Worst-case probability-contract gaps over random histogram smoothings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySuiteReport {
    pub runs: usize,
    pub max_sum_gap: f64,
    pub min_entry: f64,
    pub pass: bool,
}

/// Random categorical samples, graphs, and penalties through
/// `smooth_histogram`; the pipeline itself asserts the contract, and the
/// report keeps the observed worst cases.
pub fn probability_suite(seed: u64, runs: usize) -> ProbabilitySuiteReport {
    let cfg = SolverConfig::strict();
    let mut rng = asymptotics::replicate_rng(seed, 0);
    let mut max_sum_gap = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for index in 0..runs {
        let (dag, _, pen) = random_instance(&mut rng, index);
        let n_draws = 1 + (rng.random::<u32>() % 500) as usize;
        let outcomes: Vec<usize> = (0..n_draws)
            .map(|_| (rng.random::<f64>() * dag.n_vertices() as f64) as usize)
            .collect();
        let smoothed = distribution::smooth_histogram(
            &CategoricalSample::new(outcomes),
            &dag,
            &pen,
            &cfg,
        )
        .expect("contract holds");
        max_sum_gap = max_sum_gap.max(math::abs(smoothed.pmf().sum() - 1.0));
        min_entry = min_entry.min(smoothed.pmf().iter().cloned().fold(f64::INFINITY, f64::min));
    }
    ProbabilitySuiteReport {
        runs,
        max_sum_gap,
        min_entry,
        pass: max_sum_gap <= PROBABILITY_CONTRACT_TOL_LOCAL && min_entry >= -PROBABILITY_CONTRACT_TOL_LOCAL,
    }
}

const PROBABILITY_CONTRACT_TOL_LOCAL: f64 = distribution::PROBABILITY_CONTRACT_TOL;

/// Worst-case max-norm gap between the large-penalty solver limit and exact
/// isotonic regression on random chains.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicLimitReport {
    pub instances: usize,
    pub max_gap: f64,
    pub pass: bool,
}

pub fn isotonic_limit_suite(seed: u64, instances: usize) -> IsotonicLimitReport {
    let cfg = SolverConfig::strict();
    let mut rng = asymptotics::replicate_rng(seed, 0);
    let huge = PenaltyConfig::new(0.0, 1e4).expect("valid");
    let mut max_gap = 0.0f64;
    for _ in 0..instances {
        let n = 1 + (rng.random::<u32>() % 20) as usize;
        let dag = Dag::chain(n).expect("valid chain");
        let y = Signal::new((0..n).map(|_| rng.random::<f64>()).collect()).expect("finite");
        let res = solver::solve(&y, &dag, &huge, &cfg).expect("verification solve converges");
        let iso = oracle::pava_chain(&y).expect("nonempty");
        for i in 0..n {
            max_gap = max_gap.max(math::abs(res.beta[i] - iso[i]));
        }
    }
    IsotonicLimitReport {
        instances,
        max_gap,
        pass: max_gap <= ISOTONIC_LIMIT_TOL,
    }
}
