//! Dual feasible points for `max -f*(nu) s.t. A^T nu >= 0`.
//!
//! The cheap route takes the gradient candidate `nu' = grad f(A x)` and pulls
//! it back to feasibility along the segment towards a strictly feasible
//! anchor. The expensive route projects `nu'` orthogonally onto the cone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::problem::{clamp_primal, FeasibilityTolerances, Problem, SmoothObjective};
use crate::simplex::{self, LinearProgram, LpOutcome, RowKind};
use crate::solvers::{active_set_nnls, NnlsOptions};

/// How a strictly dual feasible point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictMethod {
    Lp,
    Ones,
    Clip,
}

/// A point with `A^T nu > 0` entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictFeasibleCertificate {
    pub nu: DVector<f64>,
    pub at_nu: DVector<f64>,
    /// `min_i (A^T nu)_i`, always positive.
    pub margin: f64,
    pub method: StrictMethod,
}

impl StrictFeasibleCertificate {
    /// Wraps a user-supplied anchor after checking strictness.
    pub fn from_point(a: &DMatrix<f64>, nu: DVector<f64>, method: StrictMethod) -> Result<Self> {
        check_len("strict point", a.nrows(), nu.len())?;
        let at_nu = linalg::mul_t(a, &nu);
        let (index, margin) = argmin(&at_nu);
        if !(margin > 0.0) {
            return Err(Error::StrictnessViolation {
                index,
                value: margin,
            });
        }
        Ok(Self {
            nu,
            at_nu,
            margin,
            method,
        })
    }
}

fn argmin(v: &DVector<f64>) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, x)| {
            if x < bv || x.is_nan() {
                (i, x)
            } else {
                (bi, bv)
            }
        })
}

/// `nu' = grad f(A x_hat)`; feasible only near optimality.
pub fn grad_dual_candidate<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("grad_dual_candidate: x", problem.ncols(), x_hat.len())?;
    check_len("grad_dual_candidate: objective", problem.nrows(), obj.dim())?;
    let x = clamp_primal(x_hat, &FeasibilityTolerances::default())?;
    Ok(obj.gradient(&problem.mul(&x)))
}

/// `t(lambda; lambda0)`: the smallest step from `lambda` towards `lambda0 > 0`
/// reaching zero.
pub fn line_search_coefficient(lambda: f64, lambda0: f64) -> Result<f64> {
    if !(lambda0 > 0.0) {
        return Err(Error::StrictnessViolation {
            index: 0,
            value: lambda0,
        });
    }
    if lambda >= 0.0 {
        Ok(0.0)
    } else {
        Ok(lambda / (lambda - lambda0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub nu: DVector<f64>,
    /// `A^T nu`, formed from the two input products.
    pub at_nu: DVector<f64>,
    pub t_star: f64,
    /// Column attaining `t_star`, if any constraint was violated.
    pub binding: Option<usize>,
}

/// Closest feasible point to `nu'` on the segment `[nu', nu_strict]`.
pub fn dual_line_search(
    at_nu_prime: &DVector<f64>,
    at_nu_strict: &DVector<f64>,
    nu_prime: &DVector<f64>,
    nu_strict: &DVector<f64>,
) -> Result<LineSearchResult> {
    check_len(
        "dual_line_search: A^T nu_strict",
        at_nu_prime.len(),
        at_nu_strict.len(),
    )?;
    check_len(
        "dual_line_search: nu_strict",
        nu_prime.len(),
        nu_strict.len(),
    )?;
    let mut t_star = 0.0;
    let mut binding = None;
    for (i, (&l, &l0)) in at_nu_prime.iter().zip(at_nu_strict.iter()).enumerate() {
        let t = line_search_coefficient(l, l0).map_err(|_| Error::StrictnessViolation {
            index: i,
            value: l0,
        })?;
        if t > t_star {
            t_star = t;
            binding = Some(i);
        }
    }
    let s = 1.0 - t_star;
    let combine = |p: &DVector<f64>, q: &DVector<f64>| p.zip_map(q, |u, v| s * u + t_star * v);
    let mut at_nu = combine(at_nu_prime, at_nu_strict);
    if let Some(i) = binding {
        // exactly zero in exact arithmetic
        at_nu[i] = at_nu[i].max(0.0);
    }
    Ok(LineSearchResult {
        nu: combine(nu_prime, nu_strict),
        at_nu,
        t_star,
        binding,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrictLpOptions {
    /// Optimal margins at or below this are treated as "no strict point".
    pub tol_strict: f64,
    /// Rescale the LP vertex to unit l1 norm.
    pub l1_normalize: bool,
}

impl Default for StrictLpOptions {
    fn default() -> Self {
        Self {
            tol_strict: 1e-9,
            l1_normalize: false,
        }
    }
}

/// Solves `max t s.t. A^T nu >= t 1, (A 1)^T nu = 1`.
pub fn strict_feasible_lp(
    a: &DMatrix<f64>,
    opts: &StrictLpOptions,
) -> Result<StrictFeasibleCertificate> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    // Variables: nu+ (m), nu- (m), t+, t-.
    let nv = 2 * m + 2;
    let mut rows = Vec::with_capacity(n + 1);
    for col in a.column_iter() {
        let mut row = vec![0.0; nv];
        for k in 0..m {
            row[k] = -col[k];
            row[m + k] = col[k];
        }
        row[2 * m] = 1.0;
        row[2 * m + 1] = -1.0;
        rows.push((row, RowKind::Le, 0.0));
    }
    let row_sums = a.column_sum();
    let mut eq = vec![0.0; nv];
    for k in 0..m {
        eq[k] = row_sums[k];
        eq[m + k] = -row_sums[k];
    }
    rows.push((eq, RowKind::Eq, 1.0));
    let mut c = vec![0.0; nv];
    c[2 * m] = 1.0;
    c[2 * m + 1] = -1.0;

    let (x, value) = match simplex::maximize(&LinearProgram { c, rows })? {
        LpOutcome::Optimal { x, value } => (x, value),
        LpOutcome::Infeasible => {
            return Err(Error::NoStrictPoint {
                margin: f64::NEG_INFINITY,
            })
        }
        LpOutcome::Unbounded => {
            return Err(Error::Degenerate(
                "strict-feasibility LP reported unbounded".into(),
            ))
        }
    };
    if !(value > opts.tol_strict) {
        return Err(Error::NoStrictPoint { margin: value });
    }
    let mut nu = DVector::from_fn(m, |k, _| x[k] - x[m + k]);
    if opts.l1_normalize {
        let s = nu.lp_norm(1);
        nu /= s;
    }
    StrictFeasibleCertificate::from_point(a, nu, StrictMethod::Lp)
        .map_err(|_| Error::NoStrictPoint { margin: value })
}

/// `nu = 1`, valid when every column of `A` has a positive sum.
pub fn strict_feasible_ones(a: &DMatrix<f64>) -> Result<StrictFeasibleCertificate> {
    let nu = DVector::from_element(a.nrows(), 1.0);
    StrictFeasibleCertificate::from_point(a, nu, StrictMethod::Ones).map_err(|e| match e {
        Error::StrictnessViolation { index, value } => {
            Error::ConditionFailed(format!("column {index} sums to {value:e}, not positive"))
        }
        other => other,
    })
}

/// `nu = max(0, nu')`, valid when it lands strictly inside the cone.
pub fn strict_feasible_clip(
    a: &DMatrix<f64>,
    nu_prime: &DVector<f64>,
) -> Result<StrictFeasibleCertificate> {
    let nu = nu_prime.map(|v| v.max(0.0));
    StrictFeasibleCertificate::from_point(a, nu, StrictMethod::Clip).map_err(|e| match e {
        Error::StrictnessViolation { index, value } => {
            Error::ConditionFailed(format!("clipped candidate has a_{index}^T nu = {value:e}"))
        }
        other => other,
    })
}

/// Euclidean projection of `nu'` onto `{nu : A^T nu >= 0}`.
///
/// Moreau decomposition against the polar cone `-cone(A)`: the result is
/// `nu' + A w` with `w = argmin_{w >= 0} ||nu' + A w||`.
pub fn orthogonal_project_dual(
    a: &DMatrix<f64>,
    nu_prime: &DVector<f64>,
    opts: &NnlsOptions,
) -> Result<DVector<f64>> {
    check_len("orthogonal_project_dual: nu", a.nrows(), nu_prime.len())?;
    let (w, _) = active_set_nnls(a, &(-nu_prime), opts)?;
    Ok(nu_prime + linalg::mul(a, &w))
}
