//! Box-constrained dual QP solver used by both SVM variants.
//!
//! Solves
//!
//! ```text
//! min_β  ½ βᵀQβ − 1ᵀβ   s.t.  0 ≤ β_i ≤ C,  Σ y_i β_i = 0
//! ```
//!
//! where `Q` already carries the label signs (`Q_ij = y_i y_j K̃_ij`). Each
//! iteration picks the maximal KKT-violating index `i` and pairs it with the
//! partner giving the largest second-order decrease, then solves the
//! two-variable subproblem in closed form.
//!
//! Rank-deficient, badly scaled problems (linear kernels with small `γ_A`)
//! make pairwise updates crawl. Every [`POLISH_EVERY`] updates the current
//! iterate seeds an active-set refinement that solves the equality-constrained
//! KKT system on the free variables exactly; its result is accepted only if
//! it meets the tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

/// Pair updates between active-set refinement attempts.
pub const POLISH_EVERY: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the maximal KKT violation falls to this value.
    pub tolerance: f64,
    /// Cap on pair updates.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub betas: DVector<f64>,
    /// Dual objective `1ᵀβ − ½ βᵀQβ` (to be maximized).
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn in_up(beta: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && beta < c) || (y < 0.0 && beta > 0.0)
}

fn in_low(beta: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && beta > 0.0) || (y < 0.0 && beta < c)
}

/// Maximal violating pair gap `max_{I_up} −y∇ − min_{I_low} −y∇`, clamped at 0.
pub fn kkt_violation(q: &DMatrix<f64>, y: &[f64], upper: f64, betas: &DVector<f64>) -> f64 {
    let grad = q * betas - DVector::from_element(y.len(), 1.0);
    violation_from_gradient(&grad, y, upper, betas)
}

fn violation_from_gradient(grad: &DVector<f64>, y: &[f64], upper: f64, betas: &DVector<f64>) -> f64 {
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for t in 0..y.len() {
        let v = -y[t] * grad[t];
        if in_up(betas[t], y[t], upper) {
            up = up.max(v);
        }
        if in_low(betas[t], y[t], upper) {
            low = low.min(v);
        }
    }
    if up.is_finite() && low.is_finite() {
        (up - low).max(0.0)
    } else {
        0.0
    }
}

pub fn solve(q: &DMatrix<f64>, y: &[f64], upper: f64, options: &SolverOptions) -> Result<QpSolution> {
    let n = y.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Contract(format!(
            "QP matrix is {}x{} for {} labels",
            q.nrows(),
            q.ncols(),
            n
        )));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Contract("QP labels must be ±1".into()));
    }
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(Error::Contract(format!("QP box bound {upper} must be positive")));
    }

    let c = upper;
    let mut beta = DVector::<f64>::zeros(n);
    let mut grad = DVector::<f64>::from_element(n, -1.0);
    let diag: Vec<f64> = (0..n).map(|i| q[(i, i)]).collect();
    let mut iterations = 0;

    loop {
        // Working-set selection.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(beta[t], y[t], c) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best_decrease = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if !in_low(beta[t], y[t], c) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * y[i] * y[t] * q[(i, t)];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let decrease = -(b * b) / a;
                    if decrease < best_decrease {
                        best_decrease = decrease;
                        j_sel = Some(t);
                    }
                }
            }
        }

        let gap = if i_sel.is_some() && gmin.is_finite() { gmax - gmin } else { 0.0 };
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gap > options.tolerance => (i, j),
            _ => break,
        };
        if iterations > 0 && (iterations % POLISH_EVERY == 0 || iterations >= options.max_iterations) {
            if let Some(polished) = active_set_refine(q, y, c, &beta, options.tolerance) {
                beta = polished;
                break;
            }
        }
        if iterations >= options.max_iterations {
            return Err(Error::Solver {
                iterations,
                residual: gap,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let qij = q[(i, j)];
        if y[i] != y[j] {
            let mut a = diag[i] + diag[j] + 2.0 * qij;
            if a <= 0.0 {
                a = TAU;
            }
            let delta = (-grad[i] - grad[j]) / a;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let mut a = diag[i] + diag[j] - 2.0 * qij;
            if a <= 0.0 {
                a = TAU;
            }
            let delta = (grad[i] - grad[j]) / a;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }

        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        for t in 0..n {
            grad[t] += q[(t, i)] * di + q[(t, j)] * dj;
        }
    }

    // Residual and objective from a fresh gradient rather than the
    // incrementally updated one.
    let qb = q * &beta;
    let fresh = &qb - DVector::from_element(n, 1.0);
    let kkt_residual = violation_from_gradient(&fresh, y, c, &beta);
    let objective = beta.sum() - 0.5 * beta.dot(&qb);
    if kkt_residual > options.tolerance {
        return Err(Error::Solver {
            iterations,
            residual: kkt_residual,
        });
    }
    Ok(QpSolution {
        betas: beta,
        objective,
        kkt_residual,
        iterations,
    })
}

/// Primal active-set method seeded with `start`. Each step solves the KKT
/// system of the free variables with the bounded ones fixed, walking towards
/// its solution until a bound blocks; an inconsistent (singular) system means
/// the objective is linear along its null space, and the least-squares
/// residual gives that descent ray. Returns a point meeting `tolerance`.
fn active_set_refine(q: &DMatrix<f64>, y: &[f64], c: f64, start: &DVector<f64>, tolerance: f64) -> Option<DVector<f64>> {
    let n = y.len();
    let mut beta = start.clone();
    let mut free: Vec<bool> = beta.iter().map(|&b| b > 1e-12 * c && b < c * (1.0 - 1e-12)).collect();
    for _ in 0..(4 * n + 20) {
        for t in 0..n {
            if !free[t] {
                beta[t] = if beta[t] <= 0.5 * c { 0.0 } else { c };
            }
        }
        let f: Vec<usize> = (0..n).filter(|&t| free[t]).collect();
        let m = f.len();
        if m > 0 {
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in f.iter().enumerate() {
                for (s, &j) in f.iter().enumerate() {
                    a[(r, s)] = q[(i, j)];
                }
                a[(r, m)] = y[i];
                a[(m, r)] = y[i];
                rhs[r] = 1.0 - (0..n).filter(|&t| !free[t]).map(|t| q[(i, t)] * beta[t]).sum::<f64>();
            }
            rhs[m] = -(0..n).filter(|&t| !free[t]).map(|t| y[t] * beta[t]).sum::<f64>();
            let svd = a.clone().svd(true, true);
            let eps = 1e-12 * svd.singular_values.max().max(1.0);
            let z = svd.solve(&rhs, eps).ok()?;
            let residual = &rhs - &a * &z;

            let mut d = DVector::zeros(m);
            let ray = residual.norm() > 1e-9 * rhs.norm().max(1.0);
            if ray {
                let grad: f64 = f
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| residual[r] * ((q.row(i) * &beta)[0] - 1.0))
                    .sum();
                if grad.abs() < 1e-15 {
                    return None;
                }
                let sign = if grad > 0.0 { -1.0 } else { 1.0 };
                for r in 0..m {
                    d[r] = sign * residual[r];
                }
            } else {
                for (r, &i) in f.iter().enumerate() {
                    d[r] = z[r] - beta[i];
                }
            }

            let mut step = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            for (r, &i) in f.iter().enumerate() {
                let limit = if d[r] < 0.0 {
                    -beta[i] / d[r]
                } else if d[r] > 0.0 {
                    (c - beta[i]) / d[r]
                } else {
                    continue;
                };
                if limit < step {
                    step = limit;
                    blocking = Some(i);
                }
            }
            if !step.is_finite() {
                return None;
            }
            for (r, &i) in f.iter().enumerate() {
                beta[i] = (beta[i] + step * d[r]).clamp(0.0, c);
            }
            if let Some(i) = blocking {
                free[i] = false;
                continue;
            }
        }

        let grad = q * &beta - DVector::from_element(n, 1.0);
        if violation_from_gradient(&grad, y, c, &beta) <= tolerance {
            let balance: f64 = beta.iter().zip(y).map(|(b, y)| b * y).sum();
            return (balance.abs() <= 1e-9).then_some(beta);
        }
        // Release the most violating bounded variables.
        let mut released = false;
        let (mut up, mut up_t, mut low, mut low_t) = (f64::NEG_INFINITY, None, f64::INFINITY, None);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(beta[t], y[t], c) && v > up {
                up = v;
                up_t = Some(t);
            }
            if in_low(beta[t], y[t], c) && v < low {
                low = v;
                low_t = Some(t);
            }
        }
        for t in [up_t, low_t].into_iter().flatten() {
            if !free[t] {
                free[t] = true;
                released = true;
            }
        }
        if !released {
            return None;
        }
    }
    None
}
