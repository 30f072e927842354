//! Slow, simple references used to validate the solver: exhaustive lattice
//! search for up to three vertices, a diminishing-step subgradient method
//! for small graphs, and pool-adjacent-violators for chains.

use crate::graph::Dag;
use crate::math;
use crate::solver::{PenaltyConfig, Signal, SolverError};
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid search supports at most 3 vertices, got {n_vertices}")]
    TooLarge { n_vertices: usize },
    #[error("invalid grid: need lo < hi and step > 0 (lo={lo}, hi={hi}, step={step})")]
    InvalidGrid { lo: f64, hi: f64, step: f64 },
    #[error("input must not be empty")]
    EmptyInput,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Exhaustive minimization of the penalized objective over the lattice
/// `{lo, lo+step, ..., hi}^n`, `n <= 3`. Ties break to the lexicographically
/// smallest vector (the scan is lexicographic and keeps strict improvements).
pub fn grid_oracle(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Signal, OracleError> {
    let n = dag.n_vertices();
    if n > 3 {
        return Err(OracleError::TooLarge { n_vertices: n });
    }
    if !(lo < hi && step > 0.0 && lo.is_finite() && hi.is_finite() && step.is_finite()) {
        return Err(OracleError::InvalidGrid { lo, hi, step });
    }
    if y.len() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            got: y.len(),
        }
        .into());
    }
    let points = ((hi - lo) / step + 1e-9) as usize + 1;
    let value = |k: usize| lo + k as f64 * step;
    let lf = pen.lambda_fused();
    let lni = pen.lambda_ni();
    let edge_pen = |d: f64| lf * math::abs(d) + lni * d.max(0.0);

    let mut best = f64::INFINITY;
    let mut best_point = vec![lo; n];
    match n {
        1 => {
            for a in 0..points {
                let b0 = value(a);
                let f = 0.5 * (b0 - y[0]) * (b0 - y[0]);
                if f < best {
                    best = f;
                    best_point[0] = b0;
                }
            }
        }
        2 => {
            for a in 0..points {
                let b0 = value(a);
                let f0 = 0.5 * (b0 - y[0]) * (b0 - y[0]);
                for b in 0..points {
                    let b1 = value(b);
                    let mut f = f0 + 0.5 * (b1 - y[1]) * (b1 - y[1]);
                    for &(s, t) in dag.edges() {
                        let beta = [b0, b1];
                        f += edge_pen(beta[s] - beta[t]);
                    }
                    if f < best {
                        best = f;
                        best_point = vec![b0, b1];
                    }
                }
            }
        }
        3 => {
            // Split edges into those within {0,1} and those touching vertex 2,
            // so the innermost loop only re-evaluates what changed.
            let outer_edges: Vec<(usize, usize)> = dag
                .edges()
                .iter()
                .copied()
                .filter(|&(s, t)| s < 2 && t < 2)
                .collect();
            let inner_edges: Vec<(usize, usize)> = dag
                .edges()
                .iter()
                .copied()
                .filter(|&(s, t)| s == 2 || t == 2)
                .collect();
            for a in 0..points {
                let b0 = value(a);
                let f0 = 0.5 * (b0 - y[0]) * (b0 - y[0]);
                for b in 0..points {
                    let b1 = value(b);
                    let mut f01 = f0 + 0.5 * (b1 - y[1]) * (b1 - y[1]);
                    let pair = [b0, b1];
                    for &(s, t) in &outer_edges {
                        f01 += edge_pen(pair[s] - pair[t]);
                    }
                    if f01 >= best {
                        // Even a perfect inner coordinate cannot win: the
                        // remaining terms are nonnegative.
                        continue;
                    }
                    for c in 0..points {
                        let b2 = value(c);
                        let mut f = f01 + 0.5 * (b2 - y[2]) * (b2 - y[2]);
                        let beta = [b0, b1, b2];
                        for &(s, t) in &inner_edges {
                            f += edge_pen(beta[s] - beta[t]);
                        }
                        if f < best {
                            best = f;
                            best_point = vec![b0, b1, b2];
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(Signal::new(best_point)?)
}

/// Subgradient descent on the penalized objective with step `1/k`, midpoint
/// subgradient selection at kinks, returning the mean of the second half of
/// the iterates. Slow but independent of the splitting solver.
pub fn subgradient_oracle(
    y: &Signal,
    dag: &Dag,
    pen: &PenaltyConfig,
    iters: usize,
) -> Result<Signal, OracleError> {
    let n = dag.n_vertices();
    if y.len() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            got: y.len(),
        }
        .into());
    }
    if iters == 0 {
        return Err(OracleError::EmptyInput);
    }
    let inc = dag.incidence();
    let m = dag.n_edges();
    let lf = pen.lambda_fused();
    let lni = pen.lambda_ni();

    let mut beta: Vec<f64> = y.to_vec();
    let mut d = vec![0.0; m];
    let mut coeff = vec![0.0; m];
    let mut grad = vec![0.0; n];
    let mut tail_sum = vec![0.0; n];
    let mut tail_count = 0u64;
    let tail_start = iters / 2;
    for k in 1..=iters {
        inc.apply(&beta, &mut d);
        for e in 0..m {
            // |.| has subdifferential [-lf, lf] at 0 (midpoint 0); (.)_+ has
            // [0, lni] at 0 (midpoint lni/2).
            coeff[e] = if d[e] > 0.0 {
                lf + lni
            } else if d[e] < 0.0 {
                -lf
            } else {
                0.5 * lni
            };
        }
        inc.apply_transpose(&coeff, &mut grad);
        let step = 1.0 / k as f64;
        for i in 0..n {
            grad[i] += beta[i] - y[i];
            beta[i] -= step * grad[i];
        }
        if k > tail_start {
            for i in 0..n {
                tail_sum[i] += beta[i];
            }
            tail_count += 1;
        }
    }
    for v in tail_sum.iter_mut() {
        *v /= tail_count as f64;
    }
    Ok(Signal::new(tail_sum)?)
}

/// Exact isotonic regression on the chain `0 < 1 < ... < n-1` by
/// pool-adjacent-violators: nondecreasing output, blockwise means, sum
/// preserved.
pub fn pava_chain(y: &Signal) -> Result<Signal, OracleError> {
    if y.is_empty() {
        return Err(OracleError::EmptyInput);
    }
    // Blocks as (sum, count), merged while adjacent means violate order.
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() >= 2 {
            let last = sums.len() - 1;
            if sums[last - 1] * counts[last] as f64 > sums[last] * counts[last - 1] as f64 {
                let (s, c) = (sums.pop().unwrap(), counts.pop().unwrap());
                sums[last - 1] += s;
                counts[last - 1] += c;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in sums.iter().zip(&counts) {
        let mean = s / *c as f64;
        out.extend(core::iter::repeat_n(mean, *c));
    }
    Ok(Signal::new(out)?)
}
