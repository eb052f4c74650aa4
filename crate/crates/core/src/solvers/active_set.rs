//! Lawson-Hanson active-set method for `min 1/2 ||Ax - b||^2 s.t. x >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    /// Optimality threshold on the negative gradient, relative to `max(1, ||A^T b||_inf)`.
    pub tol: f64,
    /// Outer-iteration cap; `None` means `10 n`.
    pub max_iter: Option<usize>,
    /// Smallest acceptable `|R_kk| / max |R_ii|` in the passive-set QR.
    pub rank_tol: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: None,
            rank_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsStatus {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// `||Ax - b||`
    pub residual_norm: f64,
    /// `min_i (A^T (Ax - b))_i` (nonnegative up to tolerance at optimality)
    pub min_dual_slack: f64,
    pub passive_set: Vec<usize>,
}

/// Least-squares solve on the columns in `passive` via Householder QR.
fn passive_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    passive: &[usize],
    rank_tol: f64,
) -> Result<DVector<f64>> {
    let m = a.nrows();
    let p = passive.len();
    if p > m {
        return Err(Error::NumericalRank {
            columns: p,
            ratio: 0.0,
        });
    }
    let sub = a.select_columns(passive);
    let qr = sub.qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let diag_min = (0..p)
        .map(|i| r[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min <= rank_tol * diag_max {
        return Err(Error::NumericalRank {
            columns: p,
            ratio: if diag_max > 0.0 {
                diag_min / diag_max
            } else {
                0.0
            },
        });
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb).ok_or(Error::NumericalRank {
        columns: p,
        ratio: diag_min / diag_max,
    })
}

/// Solves NNLS to high accuracy. Intended as the reference ("oracle") solver.
pub fn active_set_nnls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &NnlsOptions,
) -> Result<(DVector<f64>, NnlsStatus)> {
    let (m, n) = a.shape();
    check_len("active_set_nnls: b", m, b.len())?;
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n);
    let scale = linalg::mul_t(a, b).amax().max(1.0);
    let tol = opts.tol * scale;

    let mut x = DVector::zeros(n);
    let mut in_passive = vec![false; n];
    let mut passive: Vec<usize> = Vec::new();
    let mut blocked = vec![false; n];
    let mut outer = 0;
    let mut inner = 0;

    let neg_grad = |x: &DVector<f64>| -> DVector<f64> {
        let r = b - linalg::mul(a, x);
        linalg::mul_t(a, &r)
    };
    let mut w = neg_grad(&x);

    loop {
        // m full-rank passive columns fit b exactly; any remaining w is rounding
        if passive.len() >= m {
            break;
        }
        let candidate = (0..n)
            .filter(|&i| !in_passive[i] && !blocked[i])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            break;
        };
        outer += 1;
        if outer > max_iter {
            return Err(Error::NoConvergence {
                iterations: outer - 1,
            });
        }

        passive.push(j);
        in_passive[j] = true;
        let mut s = passive_solve(a, b, &passive, opts.rank_tol)?;
        // Reject a column whose first solve already drives it nonpositive;
        // retrying it would cycle.
        if s[passive.len() - 1] <= 0.0 {
            passive.pop();
            in_passive[j] = false;
            blocked[j] = true;
            continue;
        }

        loop {
            inner += 1;
            if inner > 100 * max_iter.max(1) {
                return Err(Error::NoConvergence { iterations: outer });
            }
            if s.iter().all(|&v| v > 0.0) {
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &idx) in passive.iter().enumerate() {
                if s[k] <= 0.0 {
                    let denom = x[idx] - s[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[idx] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &idx) in passive.iter().enumerate() {
                x[idx] += alpha * (s[k] - x[idx]);
            }
            // Drop every passive index that reached (or fell below) zero.
            let mut k = 0;
            while k < passive.len() {
                let idx = passive[k];
                if x[idx] <= 0.0 || s[k] <= 0.0 && x[idx] <= 1e-15 * x.amax() {
                    x[idx] = 0.0;
                    in_passive[idx] = false;
                    passive.remove(k);
                    s = s.remove_row(k);
                } else {
                    k += 1;
                }
            }
            if passive.is_empty() {
                s = DVector::zeros(0);
                break;
            }
            s = passive_solve(a, b, &passive, opts.rank_tol)?;
        }

        x.fill(0.0);
        for (k, &idx) in passive.iter().enumerate() {
            x[idx] = s[k];
        }
        w = neg_grad(&x);
        blocked.iter_mut().for_each(|v| *v = false);
    }

    let residual = linalg::mul(a, &x) - b;
    let at_r = linalg::mul_t(a, &residual);
    let mut passive_sorted = passive.clone();
    passive_sorted.sort_unstable();
    Ok((
        x,
        NnlsStatus {
            outer_iterations: outer,
            inner_iterations: inner,
            residual_norm: residual.norm(),
            min_dual_slack: at_r.min(),
            passive_set: passive_sorted,
        },
    ))
}
