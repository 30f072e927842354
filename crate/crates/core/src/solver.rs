//! The fused nearly-isotonic estimator on a DAG.
//!
//! Minimizes `(1/2)||y - beta||^2 + lf*||D beta||_1 + lni*||(D beta)_+||_1`
//! by operator splitting: the quadratic step solves the SPD system
//! `(I + rho D^T D) beta = y + rho D^T (z - u)` by warm-started conjugate
//! gradient, the `z` step is an exact elementwise proximal map, and `u`
//! accumulates the scaled dual. The scaled dual `rho*u` doubles as a KKT
//! certificate at exit.
//!
//! The conjugate-gradient step preserves the coordinate sum of its starting
//! point whenever the right-hand side sum matches (the all-ones vector is in
//! the null space of `D`), so iterates keep `sum(beta) = sum(y)` to
//! round-off throughout — not just in the limit.

use crate::graph::{Dag, IncidenceMatrix};
use crate::math;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

/// Absolute tolerance under which two adjacent fitted values count as fused.
/// One order of magnitude above the default solver tolerances.
pub const DEFAULT_FUSE_TOL: f64 = 1e-6;

/// Default tolerance for KKT certificate checks.
pub const DEFAULT_KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("value {value} at index {index} is not finite")]
    NonFinite { index: usize, value: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("penalty weights must be finite and nonnegative (got fused={lambda_fused}, ni={lambda_ni})")]
    InvalidPenalty { lambda_fused: f64, lambda_ni: f64 },
    #[error("invalid solver configuration: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error(
        "no convergence after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
        .0.iterations, .0.primal_residual, .0.dual_residual
    )]
    NotConverged(Box<SolveResult>),
    #[error("path point {index}: {source}")]
    AtPathIndex {
        index: usize,
        #[source]
        source: Box<SolverError>,
    },
}

/// A real vector indexed by the vertices of a [`Dag`]. Entries are finite
/// by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self, SolverError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(SolverError::NonFinite { index, value });
            }
        }
        Ok(Signal { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl core::ops::Deref for Signal {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl<'a> IntoIterator for &'a Signal {
    type Item = &'a f64;
    type IntoIter = core::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.values.iter()
    }
}

/// Nonnegative penalty pair: `lambda_fused` weights absolute differences,
/// `lambda_ni` weights positive (order-violating) differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    lambda_fused: f64,
    lambda_ni: f64,
}

impl PenaltyConfig {
    pub fn new(lambda_fused: f64, lambda_ni: f64) -> Result<Self, SolverError> {
        if !(lambda_fused.is_finite() && lambda_ni.is_finite() && lambda_fused >= 0.0 && lambda_ni >= 0.0)
        {
            return Err(SolverError::InvalidPenalty {
                lambda_fused,
                lambda_ni,
            });
        }
        Ok(PenaltyConfig {
            lambda_fused,
            lambda_ni,
        })
    }

    pub fn zero() -> Self {
        PenaltyConfig {
            lambda_fused: 0.0,
            lambda_ni: 0.0,
        }
    }

    pub fn lambda_fused(&self) -> f64 {
        self.lambda_fused
    }

    pub fn lambda_ni(&self) -> f64 {
        self.lambda_ni
    }

    /// Scales both weights by `n^q` — the growth rule `lambda_n = lambda_0 * n^q`
    /// that keeps the penalties on the scale of the estimation error.
    pub fn at_sample_size(&self, n: u64, q: f64) -> PenaltyConfig {
        let factor = math::powf(n as f64, q);
        PenaltyConfig {
            lambda_fused: self.lambda_fused * factor,
            lambda_ni: self.lambda_ni * factor,
        }
    }
}

/// Splitting-solver knobs. `rho` is the splitting penalty; the stopping rule
/// is max-norm on both residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iters: 100_000,
            cg_tol: 1e-12,
            cg_max_iters: 10_000,
        }
    }
}

impl SolverConfig {
    /// Verification-grade tolerances: two orders tighter than the defaults,
    /// so certificate and conservation checks at 1e-6 / 1e-8 have slack.
    pub fn strict() -> Self {
        SolverConfig {
            tol_primal: 1e-10,
            tol_dual: 1e-10,
            max_iters: 400_000,
            ..SolverConfig::default()
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            (self.rho, "rho must be positive and finite"),
            (self.tol_primal, "tol_primal must be positive and finite"),
            (self.tol_dual, "tol_dual must be positive and finite"),
            (self.cg_tol, "cg_tol must be positive and finite"),
        ];
        for (value, reason) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SolverError::InvalidConfig { reason });
            }
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig {
                reason: "max_iters must be at least 1",
            });
        }
        if self.cg_max_iters == 0 {
            return Err(SolverError::InvalidConfig {
                reason: "cg_max_iters must be at least 1",
            });
        }
        Ok(())
    }
}

/// Solver output: the minimizer, the per-edge dual certificate, and exit
/// diagnostics. On a successful return both residuals are at or below the
/// configured tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub beta: Signal,
    /// Per-edge dual `gamma = rho * u`. At a solution it lies in the box
    /// `[-lf, lf + lni]`, pinned to the appropriate face on active edges.
    pub edge_dual: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Partition of the vertices into connected groups of equal fitted value.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPartition {
    pub regions: Vec<Vec<usize>>,
    /// Mean fitted value of each region, same order as `regions`.
    pub region_values: Vec<f64>,
}

/// Max-norm optimality gaps for a claimed solution/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||beta - y + D^T gamma||_inf`.
    pub stationarity_gap: f64,
    /// Worst excursion of `gamma` outside `[-lf, lf + lni]`.
    pub box_violation: f64,
    /// Worst face mismatch on edges with `|D beta| > tol`.
    pub complementarity_violation: f64,
    pub pass: bool,
}

/// Proximal map of `z -> lf*|z| + lni*z_+` with step `t`: an asymmetric
/// soft threshold with dead zone `[-t*lf, t*(lf+lni)]`. The dead zone maps
/// exactly to zero.
pub fn prox_edge_penalty(x: f64, t: f64, pen: &PenaltyConfig) -> f64 {
    let hi = t * (pen.lambda_fused + pen.lambda_ni);
    let lo = -t * pen.lambda_fused;
    if x > hi {
        x - hi
    } else if x < lo {
        x - lo
    } else {
        0.0
    }
}

/// Exact value of the penalized objective at `beta`.
pub fn objective(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    beta: &Signal,
) -> Result<f64, SolverError> {
    check_len(y, dag.n_vertices())?;
    check_len(beta, dag.n_vertices())?;
    let quad: f64 = y
        .iter()
        .zip(beta.iter())
        .map(|(yi, bi)| (yi - bi) * (yi - bi))
        .sum();
    let mut fused = 0.0;
    let mut ni = 0.0;
    for &(s, t) in dag.edges() {
        let d = beta[s] - beta[t];
        fused += math::abs(d);
        ni += d.max(0.0);
    }
    Ok(0.5 * quad + pen.lambda_fused * fused + pen.lambda_ni * ni)
}

/// Minimizes the objective for `y` on `dag`. Starts from `beta = y`.
pub fn solve(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    solve_warm(y, dag, pen, cfg, None)
}

/// Like [`solve`], but optionally starting from a previous solution of a
/// nearby problem (same graph, e.g. a neighbouring penalty pair).
pub fn solve_warm(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
    warm: Option<&SolveResult>,
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    let n = dag.n_vertices();
    let m = dag.n_edges();
    check_len(y, n)?;
    if let Some(prev) = warm {
        check_len(&prev.beta, n)?;
        if prev.edge_dual.len() != m {
            return Err(SolverError::DimensionMismatch {
                expected: m,
                got: prev.edge_dual.len(),
            });
        }
    }
    let inc = dag.incidence();
    let rho = cfg.rho;
    let t = 1.0 / rho;

    let mut beta: Vec<f64> = match warm {
        Some(prev) => prev.beta.to_vec(),
        None => y.to_vec(),
    };
    let mut u: Vec<f64> = match warm {
        Some(prev) => prev.edge_dual.iter().map(|g| g / rho).collect(),
        None => vec![0.0; m],
    };
    let mut z = vec![0.0; m];
    inc.apply(&beta, &mut z);

    let mut z_prev = vec![0.0; m];
    let mut edge_buf = vec![0.0; m];
    let mut rhs = vec![0.0; n];
    let mut vertex_buf = vec![0.0; n];
    let mut cg = CgScratch::new(n, m);

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iters {
        iterations = iter;
        // (a) beta-step: (I + rho D^T D) beta = y + rho D^T (z - u).
        for e in 0..m {
            edge_buf[e] = z[e] - u[e];
        }
        inc.apply_transpose(&edge_buf, &mut vertex_buf);
        for i in 0..n {
            rhs[i] = y[i] + rho * vertex_buf[i];
        }
        cg.solve(&inc, rho, &rhs, &mut beta, cfg.cg_tol, cfg.cg_max_iters);

        // (b) z-step: exact elementwise prox at D beta + u.
        core::mem::swap(&mut z, &mut z_prev);
        inc.apply(&beta, &mut edge_buf); // edge_buf = D beta
        primal = 0.0;
        for e in 0..m {
            z[e] = prox_edge_penalty(edge_buf[e] + u[e], t, pen);
            let r = edge_buf[e] - z[e];
            u[e] += r;
            primal = primal.max(math::abs(r));
        }

        // Dual residual: rho * ||D^T (z - z_prev)||_inf.
        for e in 0..m {
            edge_buf[e] = z[e] - z_prev[e];
        }
        inc.apply_transpose(&edge_buf, &mut vertex_buf);
        dual = rho * math::max_abs(&vertex_buf);

        if primal <= cfg.tol_primal && dual <= cfg.tol_dual {
            let result = finish(y, dag, pen, beta, &u, rho, iter, primal, dual)?;
            return Ok(result);
        }
    }
    let result = finish(y, dag, pen, beta, &u, rho, iterations, primal, dual)?;
    Err(SolverError::NotConverged(Box::new(result)))
}

/// Warm-started sweep over a penalty sequence, in order.
pub fn solve_path(
    y: &Signal,
    dag: &Dag,
    lambdas: &[PenaltyConfig],
    cfg: &SolverConfig,
) -> Result<Vec<SolveResult>, SolverError> {
    if lambdas.is_empty() {
        return Err(SolverError::InvalidConfig {
            reason: "penalty path must not be empty",
        });
    }
    let mut results: Vec<SolveResult> = Vec::with_capacity(lambdas.len());
    for (index, pen) in lambdas.iter().enumerate() {
        let warm = results.last();
        match solve_warm(y, dag, pen, cfg, warm) {
            Ok(res) => results.push(res),
            Err(source) => {
                return Err(SolverError::AtPathIndex {
                    index,
                    source: Box::new(source),
                });
            }
        }
    }
    Ok(results)
}

/// Groups vertices connected by edges whose fitted difference is at most
/// `fuse_tol` in magnitude; the region value is the mean over members.
pub fn extract_fused_regions(
    beta: &Signal,
    dag: &Dag,
    fuse_tol: f64,
) -> Result<FusedPartition, SolverError> {
    check_len(beta, dag.n_vertices())?;
    let edges = dag.edges();
    let regions =
        dag.connected_components(|e| math::abs(beta[edges[e].0] - beta[edges[e].1]) <= fuse_tol);
    let region_values = regions
        .iter()
        .map(|group| group.iter().map(|&v| beta[v]).sum::<f64>() / group.len() as f64)
        .collect();
    Ok(FusedPartition {
        regions,
        region_values,
    })
}

/// Checks the optimality certificate carried by a [`SolveResult`]:
/// stationarity `beta - y + D^T gamma = 0`, the dual box
/// `gamma_e in [-lf, lf+lni]`, and the face conditions `gamma_e = lf+lni`
/// where `(D beta)_e > tol` and `gamma_e = -lf` where `(D beta)_e < -tol`.
pub fn kkt_certificate(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    result: &SolveResult,
    tol: f64,
) -> Result<KktReport, SolverError> {
    let n = dag.n_vertices();
    let m = dag.n_edges();
    check_len(y, n)?;
    check_len(&result.beta, n)?;
    if result.edge_dual.len() != m {
        return Err(SolverError::DimensionMismatch {
            expected: m,
            got: result.edge_dual.len(),
        });
    }
    let inc = dag.incidence();
    let beta = result.beta.as_slice();
    let gamma = &result.edge_dual;

    let mut dtg = vec![0.0; n];
    inc.apply_transpose(gamma, &mut dtg);
    let mut stationarity_gap = 0.0f64;
    for i in 0..n {
        stationarity_gap = stationarity_gap.max(math::abs(beta[i] - y[i] + dtg[i]));
    }

    let hi = pen.lambda_fused + pen.lambda_ni;
    let lo = -pen.lambda_fused;
    let mut box_violation = 0.0f64;
    let mut complementarity_violation = 0.0f64;
    let mut d_beta = vec![0.0; m];
    inc.apply(beta, &mut d_beta);
    for e in 0..m {
        box_violation = box_violation.max((gamma[e] - hi).max(lo - gamma[e]).max(0.0));
        if d_beta[e] > tol {
            complementarity_violation = complementarity_violation.max(math::abs(gamma[e] - hi));
        } else if d_beta[e] < -tol {
            complementarity_violation = complementarity_violation.max(math::abs(gamma[e] - lo));
        }
    }
    let pass =
        stationarity_gap <= tol && box_violation <= tol && complementarity_violation <= tol;
    Ok(KktReport {
        stationarity_gap,
        box_violation,
        complementarity_violation,
        pass,
    })
}

fn check_len(signal: &Signal, expected: usize) -> Result<(), SolverError> {
    if signal.len() != expected {
        return Err(SolverError::DimensionMismatch {
            expected,
            got: signal.len(),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    beta: Vec<f64>,
    u: &[f64],
    rho: f64,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
) -> Result<SolveResult, SolverError> {
    let beta = Signal::new(beta)?;
    let objective = objective(y, dag, pen, &beta)?;
    Ok(SolveResult {
        beta,
        edge_dual: u.iter().map(|ui| rho * ui).collect(),
        iterations,
        primal_residual,
        dual_residual,
        objective,
    })
}

/// Applies `out = (I + rho D^T D) x` through the two scratch buffers.
fn apply_spd(
    inc: &IncidenceMatrix,
    rho: f64,
    x: &[f64],
    out: &mut [f64],
    edge: &mut [f64],
    vertex: &mut [f64],
) {
    inc.apply(x, edge);
    inc.apply_transpose(edge, vertex);
    for i in 0..x.len() {
        out[i] = x[i] + rho * vertex[i];
    }
}

/// Conjugate gradient on `(I + rho D^T D) x = rhs`, warm-started from the
/// incoming `x`. The system is SPD with eigenvalues at least 1, so no
/// preconditioning is needed. Stops when the l2 residual is at or below
/// `tol` or after `max_iters` passes.
struct CgScratch {
    r: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    edge: Vec<f64>,
    vertex: Vec<f64>,
}

impl CgScratch {
    fn new(n: usize, m: usize) -> Self {
        CgScratch {
            r: vec![0.0; n],
            p: vec![0.0; n],
            ap: vec![0.0; n],
            edge: vec![0.0; m],
            vertex: vec![0.0; n],
        }
    }

    fn solve(
        &mut self,
        inc: &IncidenceMatrix,
        rho: f64,
        rhs: &[f64],
        x: &mut [f64],
        tol: f64,
        max_iters: usize,
    ) {
        let n = x.len();
        apply_spd(inc, rho, x, &mut self.ap, &mut self.edge, &mut self.vertex);
        for i in 0..n {
            self.r[i] = rhs[i] - self.ap[i];
        }
        let mut rs = math::dot(&self.r, &self.r);
        if math::sqrt(rs) <= tol {
            return;
        }
        self.p.copy_from_slice(&self.r);
        for _ in 0..max_iters {
            apply_spd(
                inc,
                rho,
                &self.p,
                &mut self.ap,
                &mut self.edge,
                &mut self.vertex,
            );
            let pap = math::dot(&self.p, &self.ap);
            if pap <= 0.0 {
                return; // round-off exhausted; x is as good as it gets
            }
            let alpha = rs / pap;
            for i in 0..n {
                x[i] += alpha * self.p[i];
                self.r[i] -= alpha * self.ap[i];
            }
            let rs_new = math::dot(&self.r, &self.r);
            if math::sqrt(rs_new) <= tol {
                return;
            }
            let ratio = rs_new / rs;
            for i in 0..n {
                self.p[i] = self.r[i] + ratio * self.p[i];
            }
            rs = rs_new;
        }
    }
}
