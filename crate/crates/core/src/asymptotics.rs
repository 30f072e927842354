//! The scaled-error limit law of the smoothed estimator, at desk scale.
//!
//! When the base estimator's scaled error converges to a Gaussian `psi` and
//! the penalties grow like `lambda_0 * n^q`, the scaled error of the
//! smoothed estimator converges to the minimizer of a convex limit
//! objective (see [`limit_objective`]). That objective is, up to a constant,
//! twice the solver objective with target `psi - c/2` on the subgraph of
//! edges where the true signal is flat, with halved penalties — so
//! [`limit_law_solve`] computes the limit draw *exactly* with the same
//! solver used at finite sample sizes. The factor-of-2 bookkeeping is
//! centralized there and pinned by tests against the literal objective.
//!
//! Monte Carlo runs are seeded per replicate: replicate `r` uses stream `r`
//! of a counter-based generator (ChaCha8), so results do not depend on
//! execution order.

use crate::graph::Dag;
use crate::math;
use crate::solver::{self, PenaltyConfig, Signal, SolverConfig, SolverError};
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Tolerance on `|sum(p) - 1|` when validating probability vectors.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not a probability vector: {reason}")]
    InvalidProbabilityVector { reason: &'static str },
    #[error("limit penalties must be finite and nonnegative, rate exponent positive")]
    InvalidLimitSpec,
    #[error("need at least one replicate")]
    NoReplicates,
    #[error("sample size must be at least 1")]
    EmptySampleSize,
    #[error("true signal is not isotonic: edge {edge} decreases")]
    NotIsotonic { edge: usize },
    #[error("decomposition requires a zero fusion penalty, got {lambda_f0}")]
    FusionPenaltyNotZero { lambda_f0: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Everything that pins down the limit experiment: the true signal, the
/// limit penalties, the convergence rate exponent, and the tolerance used
/// to classify edges of the true signal as flat.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawSpec {
    true_signal: Signal,
    lambda_f0: f64,
    lambda_ni0: f64,
    q: f64,
    eq_tol: f64,
}

impl LimitLawSpec {
    /// `eq_tol` defaults to 1e-12: the true signal is user-specified, so
    /// equal entries are meant to be exactly equal.
    pub fn new(
        true_signal: Signal,
        lambda_f0: f64,
        lambda_ni0: f64,
        q: f64,
    ) -> Result<Self, AsymptoticsError> {
        if !(lambda_f0.is_finite() && lambda_f0 >= 0.0 && lambda_ni0.is_finite() && lambda_ni0 >= 0.0)
            || !(q.is_finite() && q > 0.0)
        {
            return Err(AsymptoticsError::InvalidLimitSpec);
        }
        Ok(LimitLawSpec {
            true_signal,
            lambda_f0,
            lambda_ni0,
            q,
            eq_tol: 1e-12,
        })
    }

    pub fn with_eq_tol(mut self, eq_tol: f64) -> Result<Self, AsymptoticsError> {
        if !(eq_tol.is_finite() && eq_tol > 0.0) {
            return Err(AsymptoticsError::InvalidLimitSpec);
        }
        self.eq_tol = eq_tol;
        Ok(self)
    }

    pub fn true_signal(&self) -> &Signal {
        &self.true_signal
    }

    pub fn lambda_f0(&self) -> f64 {
        self.lambda_f0
    }

    pub fn lambda_ni0(&self) -> f64 {
        self.lambda_ni0
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn eq_tol(&self) -> f64 {
        self.eq_tol
    }

    /// Limit penalties as a [`PenaltyConfig`].
    pub fn limit_penalties(&self) -> PenaltyConfig {
        PenaltyConfig::new(self.lambda_f0, self.lambda_ni0)
            .expect("validated at construction")
    }
}

/// Disjoint edge lists covering all edges: flat (`eq`), increasing-violation
/// (`pos`, source above target), and strictly ordered (`neg`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeClassification {
    pub eq_edges: Vec<usize>,
    pub pos_edges: Vec<usize>,
    pub neg_edges: Vec<usize>,
}

impl EdgeClassification {
    /// Membership mask over all `m` edges; `true` marks a flat edge.
    pub fn eq_mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &e in &self.eq_edges {
            mask[e] = true;
        }
        mask
    }
}

/// Splits the edges of `dag` by the true signal's differences: flat within
/// `eq_tol`, positive above it, negative below.
pub fn classify_edges(
    spec: &LimitLawSpec,
    dag: &Dag,
) -> Result<EdgeClassification, AsymptoticsError> {
    let truth = spec.true_signal();
    if truth.len() != dag.n_vertices() {
        return Err(AsymptoticsError::DimensionMismatch {
            expected: dag.n_vertices(),
            got: truth.len(),
        });
    }
    let mut cls = EdgeClassification {
        eq_edges: Vec::new(),
        pos_edges: Vec::new(),
        neg_edges: Vec::new(),
    };
    for (e, &(s, t)) in dag.edges().iter().enumerate() {
        let d = truth[s] - truth[t];
        if math::abs(d) <= spec.eq_tol {
            cls.eq_edges.push(e);
        } else if d > spec.eq_tol {
            cls.pos_edges.push(e);
        } else {
            cls.neg_edges.push(e);
        }
    }
    Ok(cls)
}

/// Gradient `c` of the linear penalty terms of the limit objective, so that
/// those terms equal `c^T w`: each non-flat edge contributes
/// `lambda_f0 * sign` to its endpoints, each positive edge additionally
/// `lambda_ni0`.
pub fn linear_shift(spec: &LimitLawSpec, dag: &Dag, cls: &EdgeClassification) -> Vec<f64> {
    let mut c = vec![0.0; dag.n_vertices()];
    let edges = dag.edges();
    for &e in &cls.pos_edges {
        let (s, t) = edges[e];
        let w = spec.lambda_f0 + spec.lambda_ni0;
        c[s] += w;
        c[t] -= w;
    }
    for &e in &cls.neg_edges {
        let (s, t) = edges[e];
        c[s] -= spec.lambda_f0;
        c[t] += spec.lambda_f0;
    }
    c
}

/// Exact minimizer of the limit objective for a given noise draw, by
/// reduction to the base solver: target `noise - c/2`, flat-edge subgraph,
/// penalties halved. The limit objective is strictly convex, so this is the
/// unique minimizer.
pub fn limit_law_solve(
    noise: &Signal,
    spec: &LimitLawSpec,
    dag: &Dag,
    cfg: &SolverConfig,
) -> Result<Signal, AsymptoticsError> {
    if noise.len() != dag.n_vertices() {
        return Err(AsymptoticsError::DimensionMismatch {
            expected: dag.n_vertices(),
            got: noise.len(),
        });
    }
    let cls = classify_edges(spec, dag)?;
    let c = linear_shift(spec, dag, &cls);
    let target = Signal::new(
        noise
            .iter()
            .zip(&c)
            .map(|(psi, ci)| psi - 0.5 * ci)
            .collect(),
    )
    .map_err(SolverError::from)?;
    let mask = cls.eq_mask(dag.n_edges());
    let flat = dag.edge_subgraph(|e| mask[e]);
    let pen = PenaltyConfig::new(0.5 * spec.lambda_f0, 0.5 * spec.lambda_ni0)
        .expect("halved penalties stay valid");
    let result = solver::solve(&target, &flat, &pen, cfg)?;
    Ok(result.beta)
}

/// Literal evaluation of the limit objective
/// `V(w) = -2 noise^T w + w^T w + linear and flat-edge penalty sums`;
/// used to cross-check [`limit_law_solve`].
pub fn limit_objective(
    w: &Signal,
    noise: &Signal,
    spec: &LimitLawSpec,
    dag: &Dag,
) -> Result<f64, AsymptoticsError> {
    let n = dag.n_vertices();
    for v in [w.len(), noise.len(), spec.true_signal().len()] {
        if v != n {
            return Err(AsymptoticsError::DimensionMismatch { expected: n, got: v });
        }
    }
    let truth = spec.true_signal();
    let mut value = 0.0;
    for i in 0..n {
        value += w[i] * w[i] - 2.0 * noise[i] * w[i];
    }
    for &(s, t) in dag.edges() {
        let d_true = truth[s] - truth[t];
        let d_w = w[s] - w[t];
        if math::abs(d_true) <= spec.eq_tol {
            value += spec.lambda_f0 * math::abs(d_w) + spec.lambda_ni0 * d_w.max(0.0);
        } else {
            let sign = if d_true > 0.0 { 1.0 } else { -1.0 };
            value += spec.lambda_f0 * sign * d_w;
            if d_true > 0.0 {
                value += spec.lambda_ni0 * d_w;
            }
        }
    }
    Ok(value)
}

fn validate_probability(p: &Signal) -> Result<(), AsymptoticsError> {
    if p.is_empty() {
        return Err(AsymptoticsError::InvalidProbabilityVector {
            reason: "empty vector",
        });
    }
    if p.iter().any(|&x| x < 0.0) {
        return Err(AsymptoticsError::InvalidProbabilityVector {
            reason: "negative entry",
        });
    }
    if math::abs(p.sum() - 1.0) > PROBABILITY_SUM_TOL {
        return Err(AsymptoticsError::InvalidProbabilityVector {
            reason: "entries do not sum to 1",
        });
    }
    Ok(())
}

/// Draws from `N(0, diag(p) - p p^T)`, the scaled-error limit of an
/// empirical pmf. With `u = sqrt(p)` elementwise and `z` standard normal,
/// `psi = diag(u) (z - (u^T z) u)` has exactly that covariance because
/// `I - u u^T` is an orthogonal projector when `||u|| = 1`; no covariance
/// factorization is needed even though the matrix is singular. Coordinates
/// sum to zero up to round-off on every draw.
pub fn sample_multinomial_noise(
    p: &Signal,
    rng: &mut impl Rng,
) -> Result<Signal, AsymptoticsError> {
    validate_probability(p)?;
    let u: Vec<f64> = p.iter().map(|&x| math::sqrt(x)).collect();
    let z: Vec<f64> = (0..p.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let uz = math::dot(&u, &z);
    let psi: Vec<f64> = (0..p.len()).map(|i| u[i] * (z[i] - uz * u[i])).collect();
    Ok(Signal::new(psi).map_err(SolverError::from)?)
}

/// The counter-based generator behind every Monte Carlo run: replicate `r`
/// of a run seeded with `seed` draws from stream `r`, so replicates are
/// independent of execution order and may run in parallel.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Which experiment produced an [`EmpiricalLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    /// Scaled errors `n^q (beta_smoothed - truth)` at a finite sample size.
    FiniteSample,
    /// Draws from the limit law `argmin V`.
    Limit,
}

/// Generation parameters kept alongside the samples; serialized by callers
/// into the JSON sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct LawMeta {
    pub kind: LawKind,
    /// Finite-sample size `n`; `None` for limit draws.
    pub sample_size: Option<u64>,
    pub q: f64,
    pub lambda_f0: f64,
    pub lambda_ni0: f64,
    pub requested_replicates: usize,
    /// Replicates excluded because the solver hit its iteration cap.
    pub failed_replicates: Vec<u64>,
}

/// A matrix of Monte Carlo draws: one row per replicate, one column per
/// vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    samples: Vec<f64>,
    dim: usize,
    pub seed: u64,
    pub meta: LawMeta,
}

impl EmpiricalLaw {
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        seed: u64,
        meta: LawMeta,
    ) -> Result<Self, AsymptoticsError> {
        if rows.is_empty() {
            return Err(AsymptoticsError::NoReplicates);
        }
        let dim = rows[0].len();
        let mut samples = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(AsymptoticsError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (index, &value) in row.iter().enumerate() {
                if !value.is_finite() {
                    return Err(SolverError::NonFinite { index, value }.into());
                }
            }
            samples.extend_from_slice(row);
        }
        Ok(EmpiricalLaw {
            samples,
            dim,
            seed,
            meta,
        })
    }

    pub fn replicates(&self) -> usize {
        if self.dim == 0 { 0 } else { self.samples.len() / self.dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.samples[r * self.dim..(r + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim.max(1))
    }

    /// Column of coordinate `i` across replicates.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.rows().map(|row| row[i]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let reps = self.replicates() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= reps;
        }
        mean
    }

    /// Sample covariance (denominator `reps - 1`; zero matrix for a single
    /// replicate), row-major `dim x dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let reps = self.replicates();
        let d = self.dim;
        let mut cov = vec![0.0; d * d];
        if reps < 2 {
            return cov;
        }
        let mean = self.mean();
        for row in self.rows() {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (reps - 1) as f64;
        for v in cov.iter_mut() {
            *v /= denom;
        }
        cov
    }
}

/// One finite-sample replicate: `n` categorical draws from `p`, empirical
/// pmf, smoothing solve at penalties `lambda_0 * n^q`, then the scaled error
/// `n^q (beta - p)`. Deterministic given `(seed, replicate)`.
pub fn finite_sample_row(
    p: &Signal,
    dag: &Dag,
    n: u64,
    lambda0: &PenaltyConfig,
    q: f64,
    seed: u64,
    replicate: u64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, AsymptoticsError> {
    validate_probability(p)?;
    if p.len() != dag.n_vertices() {
        return Err(AsymptoticsError::DimensionMismatch {
            expected: dag.n_vertices(),
            got: p.len(),
        });
    }
    if n == 0 {
        return Err(AsymptoticsError::EmptySampleSize);
    }
    let mut rng = replicate_rng(seed, replicate);
    let mut cdf: Vec<f64> = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &x in p.iter() {
        acc += x;
        cdf.push(acc);
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n {
        let x: f64 = rng.random();
        let cell = cdf.partition_point(|&c| c <= x).min(p.len() - 1);
        counts[cell] += 1;
    }
    let pmf = Signal::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
        .map_err(SolverError::from)?;
    let pen = lambda0.at_sample_size(n, q);
    let result = solver::solve(&pmf, dag, &pen, cfg)?;
    let scale = math::powf(n as f64, q);
    Ok(result
        .beta
        .iter()
        .zip(p.iter())
        .map(|(b, t)| scale * (b - t))
        .collect())
}

/// Finite-sample Monte Carlo: `reps` replicates of [`finite_sample_row`].
/// Replicates whose solve hits the iteration cap are excluded and recorded
/// in the returned metadata; other errors abort.
#[allow(clippy::too_many_arguments)]
pub fn mc_finite_sample(
    p: &Signal,
    dag: &Dag,
    n: u64,
    lambda0: &PenaltyConfig,
    q: f64,
    reps: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<EmpiricalLaw, AsymptoticsError> {
    if reps == 0 {
        return Err(AsymptoticsError::NoReplicates);
    }
    let mut rows = Vec::with_capacity(reps);
    let mut failed = Vec::new();
    for r in 0..reps {
        match finite_sample_row(p, dag, n, lambda0, q, seed, r as u64, cfg) {
            Ok(row) => rows.push(row),
            Err(AsymptoticsError::Solver(SolverError::NotConverged(_))) => failed.push(r as u64),
            Err(other) => return Err(other),
        }
    }
    let meta = LawMeta {
        kind: LawKind::FiniteSample,
        sample_size: Some(n),
        q,
        lambda_f0: lambda0.lambda_fused(),
        lambda_ni0: lambda0.lambda_ni(),
        requested_replicates: reps,
        failed_replicates: failed,
    };
    EmpiricalLaw::from_rows(rows, seed, meta)
}

/// One limit replicate: a noise draw from stream `replicate` followed by the
/// exact limit solve.
pub fn limit_row(
    spec: &LimitLawSpec,
    dag: &Dag,
    seed: u64,
    replicate: u64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, AsymptoticsError> {
    let mut rng = replicate_rng(seed, replicate);
    let noise = sample_multinomial_noise(spec.true_signal(), &mut rng)?;
    let w = limit_law_solve(&noise, spec, dag, cfg)?;
    Ok(w.into_vec())
}

/// Limit-law Monte Carlo: `reps` draws of `argmin V`. The sampling
/// distribution is the spec's true signal (a probability vector). Any
/// replicate failure aborts the run.
pub fn mc_limit(
    spec: &LimitLawSpec,
    dag: &Dag,
    reps: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<EmpiricalLaw, AsymptoticsError> {
    if reps == 0 {
        return Err(AsymptoticsError::NoReplicates);
    }
    let mut rows = Vec::with_capacity(reps);
    for r in 0..reps {
        rows.push(limit_row(spec, dag, seed, r as u64, cfg)?);
    }
    let meta = LawMeta {
        kind: LawKind::Limit,
        sample_size: None,
        q: spec.q,
        lambda_f0: spec.lambda_f0,
        lambda_ni0: spec.lambda_ni0,
        requested_replicates: reps,
        failed_replicates: Vec::new(),
    };
    EmpiricalLaw::from_rows(rows, seed, meta)
}

/// Coordinatewise two-sample distances between two empirical laws.
#[derive(Debug, Clone, PartialEq)]
pub struct LawComparison {
    /// Two-sample Kolmogorov-Smirnov statistic per coordinate.
    pub per_coord_ks: Vec<f64>,
    /// Max-norm difference of the replicate means.
    pub mean_gap: f64,
    /// Max-norm difference of the sample covariance matrices.
    pub cov_gap: f64,
}

impl LawComparison {
    pub fn median_ks(&self) -> f64 {
        let mut ks = self.per_coord_ks.clone();
        ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = ks.len();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            ks[n / 2]
        } else {
            0.5 * (ks[n / 2 - 1] + ks[n / 2])
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic, tie-aware.
fn ks_statistic(a: &mut Vec<f64>, b: &mut Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max(math::abs(i as f64 / na - j as f64 / nb));
    }
    d.max(math::abs(1.0 - i as f64 / na))
        .max(math::abs(1.0 - j as f64 / nb))
}

/// Compares two empirical laws of the same dimension (replicate counts may
/// differ): per-coordinate KS plus mean and covariance gaps.
pub fn compare_laws(
    a: &EmpiricalLaw,
    b: &EmpiricalLaw,
) -> Result<LawComparison, AsymptoticsError> {
    if a.dim() != b.dim() {
        return Err(AsymptoticsError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let per_coord_ks = (0..a.dim())
        .map(|i| ks_statistic(&mut a.coordinate(i), &mut b.coordinate(i)))
        .collect();
    let mean_gap = a
        .mean()
        .iter()
        .zip(b.mean())
        .fold(0.0f64, |acc, (x, y)| acc.max(math::abs(x - y)));
    let cov_gap = a
        .covariance()
        .iter()
        .zip(b.covariance())
        .fold(0.0f64, |acc, (x, y)| acc.max(math::abs(x - y)));
    Ok(LawComparison {
        per_coord_ks,
        mean_gap,
        cov_gap,
    })
}

/// Gap between the joint limit solve and independent per-region solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    pub max_gap: f64,
}

/// With no fusion penalty and an isotonic true signal, the limit solve
/// splits into independent order-penalized fits on the flat regions of the
/// true signal. Solves both sides and reports the max absolute gap.
pub fn decomposition_check(
    noise: &Signal,
    spec: &LimitLawSpec,
    dag: &Dag,
    cfg: &SolverConfig,
) -> Result<DecompositionReport, AsymptoticsError> {
    if spec.lambda_f0 != 0.0 {
        return Err(AsymptoticsError::FusionPenaltyNotZero {
            lambda_f0: spec.lambda_f0,
        });
    }
    if noise.len() != dag.n_vertices() {
        return Err(AsymptoticsError::DimensionMismatch {
            expected: dag.n_vertices(),
            got: noise.len(),
        });
    }
    let cls = classify_edges(spec, dag)?;
    if let Some(&edge) = cls.pos_edges.first() {
        return Err(AsymptoticsError::NotIsotonic { edge });
    }
    let joint = limit_law_solve(noise, spec, dag, cfg)?;

    // Per-region fits on the flat-edge subgraph, vertex ids relabelled
    // locally, results scattered back. No pos edges and a zero fusion
    // penalty make the linear shift vanish, so the target is the noise.
    let mask = cls.eq_mask(dag.n_edges());
    let regions = dag.connected_components(|e| mask[e]);
    let pen = PenaltyConfig::new(0.0, 0.5 * spec.lambda_ni0).expect("valid");
    let mut concatenated = vec![0.0; dag.n_vertices()];
    let mut local_id = vec![usize::MAX; dag.n_vertices()];
    for region in &regions {
        for (local, &v) in region.iter().enumerate() {
            local_id[v] = local;
        }
        let local_edges: Vec<(usize, usize)> = dag
            .edges()
            .iter()
            .enumerate()
            .filter(|&(e, &(s, t))| {
                mask[e] && local_id[s] != usize::MAX && local_id[t] != usize::MAX
                    && region.binary_search(&s).is_ok()
                    && region.binary_search(&t).is_ok()
            })
            .map(|(_, &(s, t))| (local_id[s], local_id[t]))
            .collect();
        let sub = Dag::from_edge_list(region.len(), local_edges)
            .expect("region subgraph of a DAG is a DAG");
        let target = Signal::new(region.iter().map(|&v| noise[v]).collect())
            .map_err(SolverError::from)?;
        let fit = solver::solve(&target, &sub, &pen, cfg)?;
        for (local, &v) in region.iter().enumerate() {
            concatenated[v] = fit.beta[local];
        }
        for &v in region {
            local_id[v] = usize::MAX;
        }
    }
    let max_gap = joint
        .iter()
        .zip(&concatenated)
        .fold(0.0f64, |acc, (a, b)| acc.max(math::abs(a - b)));
    Ok(DecompositionReport { max_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverConfig;

    fn sig(values: &[f64]) -> Signal {
        Signal::new(values.to_vec()).unwrap()
    }

    fn spec_for(truth: &[f64], lf0: f64, lni0: f64) -> LimitLawSpec {
        LimitLawSpec::new(sig(truth), lf0, lni0, 0.5).unwrap()
    }

    #[test]
    fn classify_examples() {
        let chain2 = Dag::chain(2).unwrap();
        let cls = classify_edges(&spec_for(&[0.0, 0.0], 1.0, 1.0), &chain2).unwrap();
        assert_eq!(cls.eq_edges, vec![0]);
        assert!(cls.pos_edges.is_empty() && cls.neg_edges.is_empty());

        let chain3 = Dag::chain(3).unwrap();
        let cls = classify_edges(&spec_for(&[0.0, 0.0, 1.0], 1.0, 1.0), &chain3).unwrap();
        assert_eq!(cls.eq_edges, vec![0]);
        assert_eq!(cls.neg_edges, vec![1]);

        let cls = classify_edges(&spec_for(&[1.0, 0.0], 1.0, 1.0), &chain2).unwrap();
        assert_eq!(cls.pos_edges, vec![0]);
    }

    #[test]
    fn linear_shift_examples() {
        let chain2 = Dag::chain(2).unwrap();
        let spec = spec_for(&[0.0, 1.0], 1.0, 0.0);
        let cls = classify_edges(&spec, &chain2).unwrap();
        assert_eq!(linear_shift(&spec, &chain2, &cls), vec![-1.0, 1.0]);

        let spec = spec_for(&[0.5, 0.5], 1.0, 2.0);
        let cls = classify_edges(&spec, &chain2).unwrap();
        assert_eq!(linear_shift(&spec, &chain2, &cls), vec![0.0, 0.0]);

        let spec = spec_for(&[1.0, 0.0], 0.0, 2.0);
        let cls = classify_edges(&spec, &chain2).unwrap();
        assert_eq!(linear_shift(&spec, &chain2, &cls), vec![2.0, -2.0]);
    }

    #[test]
    fn limit_solve_zero_penalties_is_identity() {
        let dag = Dag::chain(3).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.0, 0.5, 1.0]), 0.0, 0.0, 0.5).unwrap();
        let noise = sig(&[0.7, -0.2, 0.1]);
        let w = limit_law_solve(&noise, &spec, &dag, &SolverConfig::default()).unwrap();
        assert_eq!(w.as_slice(), noise.as_slice());
    }

    #[test]
    fn limit_solve_no_flat_edges_closed_form() {
        let dag = Dag::chain(3).unwrap();
        let spec = spec_for(&[0.0, 1.0, 2.0], 1.5, 0.75);
        let noise = sig(&[0.3, -0.4, 0.2]);
        let cls = classify_edges(&spec, &dag).unwrap();
        assert!(cls.eq_edges.is_empty());
        let c = linear_shift(&spec, &dag, &cls);
        let w = limit_law_solve(&noise, &spec, &dag, &SolverConfig::strict()).unwrap();
        for i in 0..3 {
            assert!((w[i] - (noise[i] - 0.5 * c[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_solve_flat_truth_reduces_to_halved_penalty_fit() {
        let dag = Dag::chain(2).unwrap();
        let spec = spec_for(&[0.5, 0.5], 0.0, 0.4);
        let noise = sig(&[1.0, 0.0]);
        let w = limit_law_solve(&noise, &spec, &dag, &SolverConfig::strict()).unwrap();
        // Order-penalized fit of (1,0) at lambda 0.2: (0.8, 0.2).
        assert!((w[0] - 0.8).abs() < 1e-8);
        assert!((w[1] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn limit_objective_examples() {
        let dag = Dag::chain(2).unwrap();
        let spec = spec_for(&[0.5, 0.5], 0.0, 0.4);
        let noise = sig(&[1.0, 0.0]);
        assert_eq!(
            limit_objective(&sig(&[0.0, 0.0]), &noise, &spec, &dag).unwrap(),
            0.0
        );
        let zero_pen = spec_for(&[0.5, 0.5], 0.0, 0.0);
        let v = limit_objective(&noise, &noise, &zero_pen, &dag).unwrap();
        assert!((v - (-1.0)).abs() < 1e-12); // -||noise||^2

        let v = limit_objective(&sig(&[0.8, 0.2]), &noise, &spec, &dag).unwrap();
        assert!((v - (-0.68)).abs() < 1e-12);
    }

    #[test]
    fn limit_objective_identity_with_reduced_solver_objective() {
        // V(w) = 2 * reduced_objective(w) - ||target||^2 pins the halving.
        let mut rng = replicate_rng(99, 0);
        let dag = Dag::grid2d(2, 3).unwrap();
        let spec = spec_for(&[0.0, 0.0, 1.0, 0.0, 1.0, 1.0], 0.7, 1.3);
        let cls = classify_edges(&spec, &dag).unwrap();
        let c = linear_shift(&spec, &dag, &cls);
        let mask = cls.eq_mask(dag.n_edges());
        let flat = dag.edge_subgraph(|e| mask[e]);
        let pen = PenaltyConfig::new(0.5 * spec.lambda_f0(), 0.5 * spec.lambda_ni0()).unwrap();
        for _ in 0..50 {
            let noise = sample_multinomial_noise(&sig(&[0.25, 0.25, 0.125, 0.125, 0.125, 0.125]), &mut rng)
                .unwrap();
            let w = sig(&(0..6).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
            let target = sig(&noise
                .iter()
                .zip(&c)
                .map(|(psi, ci)| psi - 0.5 * ci)
                .collect::<Vec<_>>());
            let norm_t: f64 = target.iter().map(|x| x * x).sum();
            let v = limit_objective(&w, &noise, &spec, &dag).unwrap();
            let reduced = crate::solver::objective(&target, &flat, &pen, &w).unwrap();
            assert!((v - (2.0 * reduced - norm_t)).abs() < 1e-10);
        }
    }

    #[test]
    fn limit_solve_beats_perturbations() {
        let mut rng = replicate_rng(123, 0);
        let dag = Dag::chain(4).unwrap();
        let cfg = SolverConfig::strict();
        for trial in 0..20 {
            let truth = match trial % 3 {
                0 => [0.25, 0.25, 0.25, 0.25],
                1 => [0.1, 0.1, 0.4, 0.4],
                _ => [0.1, 0.2, 0.3, 0.4],
            };
            let spec = spec_for(&truth, rng.random::<f64>(), rng.random::<f64>());
            let noise = sample_multinomial_noise(&sig(&truth), &mut rng).unwrap();
            let w = limit_law_solve(&noise, &spec, &dag, &cfg).unwrap();
            let v_star = limit_objective(&w, &noise, &spec, &dag).unwrap();
            for magnitude in [1e-2, 1e-4] {
                for _ in 0..25 {
                    let perturbed = sig(&w
                        .iter()
                        .map(|x| x + magnitude * (rng.random::<f64>() - 0.5))
                        .collect::<Vec<_>>());
                    let v = limit_objective(&perturbed, &noise, &spec, &dag).unwrap();
                    assert!(
                        v >= v_star - 1e-10,
                        "trial {trial}: perturbation beat the solution by {}",
                        v_star - v
                    );
                }
            }
        }
    }

    #[test]
    fn noise_sampler_degenerate_and_centered() {
        let mut rng = replicate_rng(7, 0);
        let psi = sample_multinomial_noise(&sig(&[1.0, 0.0, 0.0]), &mut rng).unwrap();
        assert_eq!(psi.as_slice(), &[0.0, 0.0, 0.0]);

        for r in 0..200 {
            let mut rng = replicate_rng(7, r);
            let psi =
                sample_multinomial_noise(&sig(&[0.1, 0.2, 0.3, 0.4]), &mut rng).unwrap();
            assert!(psi.sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn noise_sampler_covariance_matches() {
        let p = sig(&[0.25, 0.25, 0.25, 0.25]);
        let mut rng = replicate_rng(42, 0);
        let reps = 100_000;
        let rows: Vec<Vec<f64>> = (0..reps)
            .map(|_| sample_multinomial_noise(&p, &mut rng).unwrap().into_vec())
            .collect();
        let law = EmpiricalLaw::from_rows(
            rows,
            42,
            LawMeta {
                kind: LawKind::Limit,
                sample_size: None,
                q: 0.5,
                lambda_f0: 0.0,
                lambda_ni0: 0.0,
                requested_replicates: reps,
                failed_replicates: Vec::new(),
            },
        )
        .unwrap();
        let cov = law.covariance();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.25 - 0.0625 } else { -0.0625 };
                assert!(
                    (cov[i * 4 + j] - want).abs() < 0.01,
                    "cov[{i}][{j}] = {} vs {want}",
                    cov[i * 4 + j]
                );
            }
        }
    }

    #[test]
    fn invalid_probability_vectors_rejected() {
        let mut rng = replicate_rng(1, 0);
        assert!(matches!(
            sample_multinomial_noise(&sig(&[0.5, 0.6]), &mut rng),
            Err(AsymptoticsError::InvalidProbabilityVector { .. })
        ));
        assert!(matches!(
            sample_multinomial_noise(&sig(&[-0.1, 1.1]), &mut rng),
            Err(AsymptoticsError::InvalidProbabilityVector { .. })
        ));
    }

    #[test]
    fn finite_sample_zero_penalty_is_raw_scaled_error() {
        let dag = Dag::chain(3).unwrap();
        let p = sig(&[0.5, 0.25, 0.25]);
        let cfg = SolverConfig::default();
        let law = mc_finite_sample(&p, &dag, 64, &PenaltyConfig::zero(), 0.5, 10, 5, &cfg).unwrap();
        for (r, row) in law.rows().enumerate() {
            // Rebuild the empirical pmf from the same stream and compare.
            let raw = finite_sample_row(&p, &dag, 64, &PenaltyConfig::zero(), 0.5, 5, r as u64, &cfg)
                .unwrap();
            assert_eq!(row, raw.as_slice());
            let scale = 8.0; // 64^0.5
            for (x, t) in row.iter().zip(p.iter()) {
                // Scaled errors live on the counts/n lattice.
                let back = x / scale + t;
                assert!((back * 64.0 - (back * 64.0).round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn finite_sample_degenerate_point_mass() {
        let dag = Dag::chain(2).unwrap();
        let p = sig(&[1.0, 0.0]);
        let law = mc_finite_sample(
            &p,
            &dag,
            1,
            &PenaltyConfig::zero(),
            0.5,
            5,
            11,
            &SolverConfig::default(),
        )
        .unwrap();
        for row in law.rows() {
            assert_eq!(row, &[0.0, 0.0]);
        }
    }

    #[test]
    fn limit_draws_zero_penalty_reproduce_noise_stream() {
        let dag = Dag::chain(3).unwrap();
        let p = [0.2, 0.3, 0.5];
        let spec = LimitLawSpec::new(sig(&p), 0.0, 0.0, 0.5).unwrap();
        let law = mc_limit(&spec, &dag, 8, 77, &SolverConfig::default()).unwrap();
        for (r, row) in law.rows().enumerate() {
            let mut rng = replicate_rng(77, r as u64);
            let psi = sample_multinomial_noise(&sig(&p), &mut rng).unwrap();
            assert_eq!(row, psi.as_slice());
        }
    }

    #[test]
    fn limit_draws_preserve_shifted_sum() {
        let dag = Dag::chain(4).unwrap();
        let truth = [0.1, 0.2, 0.3, 0.4];
        let spec = spec_for(&truth, 0.8, 0.6);
        let cls = classify_edges(&spec, &dag).unwrap();
        let c = linear_shift(&spec, &dag, &cls);
        let c_half_sum: f64 = c.iter().map(|x| 0.5 * x).sum();
        let cfg = SolverConfig::strict();
        for r in 0..50 {
            let mut rng = replicate_rng(13, r);
            let noise = sample_multinomial_noise(spec.true_signal(), &mut rng).unwrap();
            let w = limit_law_solve(&noise, &spec, &dag, &cfg).unwrap();
            let expected = noise.sum() - c_half_sum;
            assert!((w.sum() - expected).abs() <= 1e-8);
        }
    }

    #[test]
    fn compare_identical_laws_is_zero() {
        let dag = Dag::chain(2).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.5, 0.5]), 0.0, 1.0, 0.5).unwrap();
        let law = mc_limit(&spec, &dag, 50, 3, &SolverConfig::default()).unwrap();
        let cmp = compare_laws(&law, &law).unwrap();
        assert!(cmp.per_coord_ks.iter().all(|&k| k == 0.0));
        assert_eq!(cmp.mean_gap, 0.0);
        assert_eq!(cmp.cov_gap, 0.0);
    }

    #[test]
    fn compare_disjoint_laws_is_one() {
        let meta = LawMeta {
            kind: LawKind::Limit,
            sample_size: None,
            q: 0.5,
            lambda_f0: 0.0,
            lambda_ni0: 0.0,
            requested_replicates: 3,
            failed_replicates: Vec::new(),
        };
        let a = EmpiricalLaw::from_rows(vec![vec![0.0], vec![1.0], vec![2.0]], 0, meta.clone())
            .unwrap();
        let b = EmpiricalLaw::from_rows(vec![vec![10.0], vec![11.0], vec![12.0]], 0, meta).unwrap();
        let cmp = compare_laws(&a, &b).unwrap();
        assert_eq!(cmp.per_coord_ks, vec![1.0]);
    }

    #[test]
    fn self_consistency_ks_below_critical() {
        // Two independent 2000-draw sets from the same configuration stay
        // below the 0.061 two-sample threshold in at least 3 of 4 coords.
        let dag = Dag::chain(4).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.25; 4]), 0.0, 1.0, 0.5).unwrap();
        let cfg = SolverConfig::default();
        let a = mc_limit(&spec, &dag, 2000, 101, &cfg).unwrap();
        let b = mc_limit(&spec, &dag, 2000, 202, &cfg).unwrap();
        let cmp = compare_laws(&a, &b).unwrap();
        let below = cmp.per_coord_ks.iter().filter(|&&k| k < 0.061).count();
        assert!(below >= 3, "KS stats: {:?}", cmp.per_coord_ks);
    }

    #[test]
    fn decomposition_strictly_increasing_truth_is_exact() {
        let dag = Dag::chain(4).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.1, 0.2, 0.3, 0.4]), 0.0, 1.0, 0.5).unwrap();
        let mut rng = replicate_rng(5, 0);
        let noise = sample_multinomial_noise(spec.true_signal(), &mut rng).unwrap();
        let report =
            decomposition_check(&noise, &spec, &dag, &SolverConfig::strict()).unwrap();
        assert_eq!(report.max_gap, 0.0);
    }

    #[test]
    fn decomposition_constant_and_blocked_truth() {
        let cfg = SolverConfig::strict();
        let chain2 = Dag::chain(2).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.5, 0.5]), 0.0, 0.8, 0.5).unwrap();
        let mut rng = replicate_rng(6, 0);
        let noise = sample_multinomial_noise(spec.true_signal(), &mut rng).unwrap();
        let report = decomposition_check(&noise, &spec, &chain2, &cfg).unwrap();
        assert!(report.max_gap <= 1e-8);

        let chain4 = Dag::chain(4).unwrap();
        let spec = LimitLawSpec::new(sig(&[0.1, 0.1, 0.4, 0.4]), 0.0, 1.0, 0.5).unwrap();
        for r in 0..20 {
            let mut rng = replicate_rng(8, r);
            let noise = sample_multinomial_noise(spec.true_signal(), &mut rng).unwrap();
            let report = decomposition_check(&noise, &spec, &chain4, &cfg).unwrap();
            assert!(report.max_gap <= 1e-8, "replicate {r}: gap {}", report.max_gap);
        }
    }

    #[test]
    fn decomposition_preconditions_enforced() {
        let dag = Dag::chain(2).unwrap();
        let noise = sig(&[0.1, -0.1]);
        let spec = LimitLawSpec::new(sig(&[0.5, 0.5]), 1.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            decomposition_check(&noise, &spec, &dag, &SolverConfig::default()),
            Err(AsymptoticsError::FusionPenaltyNotZero { .. })
        ));
        let spec = LimitLawSpec::new(sig(&[1.0, 0.0]), 0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            decomposition_check(&noise, &spec, &dag, &SolverConfig::default()),
            Err(AsymptoticsError::NotIsotonic { edge: 0 })
        ));
    }
}
