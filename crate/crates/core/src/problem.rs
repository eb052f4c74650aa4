//! Problem data, smooth objectives, and duality-gap bookkeeping for
//! `min f(Ax) s.t. x >= 0` and its dual `max -f*(nu) s.t. A^T nu >= 0`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Constraint matrix shared by every objective posed on it.
///
/// Full column/row rank is assumed but not validated; rank only matters to
/// the certification routines, which measure it directly.
#[derive(Debug)]
pub struct Problem {
    a: DMatrix<f64>,
    column_norms: DVector<f64>,
    gram: OnceLock<DMatrix<f64>>,
}

impl Clone for Problem {
    fn clone(&self) -> Self {
        let gram = OnceLock::new();
        if let Some(g) = self.gram.get() {
            let _ = gram.set(g.clone());
        }
        Self {
            a: self.a.clone(),
            column_norms: self.column_norms.clone(),
            gram,
        }
    }
}

impl Problem {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite matrix entry at ({}, {})",
                pos % a.nrows(),
                pos / a.nrows()
            )));
        }
        let column_norms = DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm()));
        Ok(Self {
            a,
            column_norms,
            gram: OnceLock::new(),
        })
    }

    /// Builds the problem and eagerly caches `A^T A`.
    pub fn with_gram(a: DMatrix<f64>) -> Result<Self> {
        let p = Self::new(a)?;
        p.ensure_gram();
        Ok(p)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn column_norms(&self) -> &DVector<f64> {
        &self.column_norms
    }

    /// Cached Gram matrix, if it has been computed.
    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.get()
    }

    /// Computes `A^T A` on first call; concurrent callers observe a single initialization.
    pub fn ensure_gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| {
            let g = self.a.tr_mul(&self.a);
            // symmetrize away rounding asymmetry
            (&g + g.transpose()) * 0.5
        })
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        linalg::mul(&self.a, x)
    }

    pub fn mul_t(&self, y: &DVector<f64>) -> DVector<f64> {
        linalg::mul_t(&self.a, y)
    }

    /// Default dual feasibility tolerance `1e-10 ||A||_1 ||nu||_inf`.
    pub fn dual_tolerance(&self, nu: &DVector<f64>) -> f64 {
        1e-10 * linalg::norm_one(&self.a) * nu.amax()
    }
}

/// Smooth convex loss `f` with a closed-form conjugate.
///
/// `gradient` must be `lipschitz()`-Lipschitz; the dual objective is `g = -f*`.
pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    /// `f*(nu)`; may be `+inf` outside the conjugate's domain.
    fn conjugate(&self, nu: &DVector<f64>) -> f64;
    fn lipschitz(&self) -> f64;

    fn dual_value(&self, nu: &DVector<f64>) -> f64 {
        -self.conjugate(nu)
    }

    /// Fenchel-Young residual `f(z) + f*(nu) - <nu, z>` (nonnegative).
    ///
    /// Implementations with a closed form should override this; the default
    /// suffers cancellation near equality.
    fn fenchel_young_gap(&self, z: &DVector<f64>, nu: &DVector<f64>) -> f64 {
        self.value(z) + self.conjugate(nu) - z.dot(nu)
    }
}

/// `f(z) = 1/2 ||z - b||^2`, the non-negative least-squares loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    b: DVector<f64>,
    half_b_sq: f64,
}

impl LeastSquares {
    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }
}

/// Builds the NNLS loss for right-hand side `b`.
pub fn make_nnls_objective(b: DVector<f64>) -> Result<LeastSquares> {
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("rhs entry {i} is not finite")));
    }
    let half_b_sq = 0.5 * b.norm_squared();
    Ok(LeastSquares { b, half_b_sq })
}

impl SmoothObjective for LeastSquares {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z - &self.b).norm_squared()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        z - &self.b
    }

    fn conjugate(&self, nu: &DVector<f64>) -> f64 {
        0.5 * (nu + &self.b).norm_squared() - self.half_b_sq
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn fenchel_young_gap(&self, z: &DVector<f64>, nu: &DVector<f64>) -> f64 {
        // f(z) + f*(nu) - <nu, z> = 1/2 ||nu - (z - b)||^2
        let mut acc = 0.0;
        for ((n, zi), bi) in nu.iter().zip(z.iter()).zip(self.b.iter()) {
            let d = n - (zi - bi);
            acc += d * d;
        }
        0.5 * acc
    }
}

/// Tolerances for accepting primal/dual points as feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityTolerances {
    /// Entries of `x` at or above `-primal_clamp * ||x||_inf` are clamped to zero.
    pub primal_clamp: f64,
    /// `A^T nu >= -dual_rel * ||A||_1 * ||nu||_inf` counts as dual feasible.
    pub dual_rel: f64,
    /// Gaps down to `-gap_rel * (1 + |f(Ax)|)` are treated as rounding and clamped to zero.
    pub gap_rel: f64,
}

impl Default for FeasibilityTolerances {
    fn default() -> Self {
        Self {
            primal_clamp: 1e-12,
            dual_rel: 1e-10,
            gap_rel: 1e-10,
        }
    }
}

/// Clamps tiny negative entries of `x`; errors on a genuine violation.
pub fn clamp_primal(x: &DVector<f64>, tol: &FeasibilityTolerances) -> Result<DVector<f64>> {
    let floor = -tol.primal_clamp * x.amax();
    let mut out = x.clone();
    for (i, v) in out.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("x[{i}] is not finite")));
        }
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::PrimalInfeasible {
                    index: i,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Checks `A^T nu >= -tol` with the relative dual tolerance.
pub fn check_dual_feasible(
    problem: &Problem,
    nu: &DVector<f64>,
    at_nu: &DVector<f64>,
    tol: &FeasibilityTolerances,
) -> Result<()> {
    let floor = tol.dual_rel * linalg::norm_one(problem.matrix()) * nu.amax();
    for (i, &v) in at_nu.iter().enumerate() {
        if v.is_nan() || v < -floor {
            return Err(Error::DualInfeasible {
                index: i,
                value: v,
                tolerance: floor,
            });
        }
    }
    Ok(())
}

/// Raw gap `f(Ax) + f*(nu)` evaluated in the cancellation-free form
/// `[f(Ax) + f*(nu) - <nu, Ax>] + <A^T nu, x>`.
pub(crate) fn gap_from_parts<O: SmoothObjective + ?Sized>(
    obj: &O,
    ax: &DVector<f64>,
    nu: &DVector<f64>,
    at_nu: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    obj.fenchel_young_gap(ax, nu) + linalg::dot(at_nu.as_slice(), x.as_slice())
}

/// Duality gap `f(Ax) - g(nu)` for a feasible pair.
///
/// Returns the raw value, which may be a tiny negative number from rounding.
pub fn duality_gap<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x_hat: &DVector<f64>,
    nu_hat: &DVector<f64>,
) -> Result<f64> {
    let tol = FeasibilityTolerances::default();
    check_len("duality_gap: x", problem.ncols(), x_hat.len())?;
    check_len("duality_gap: nu", problem.nrows(), nu_hat.len())?;
    check_len("duality_gap: objective", problem.nrows(), obj.dim())?;
    let x = clamp_primal(x_hat, &tol)?;
    let at_nu = problem.mul_t(nu_hat);
    check_dual_feasible(problem, nu_hat, &at_nu, &tol)?;
    let ax = problem.mul(&x);
    let gap = gap_from_parts(obj, &ax, nu_hat, &at_nu, &x);
    let floor = -tol.gap_rel * (1.0 + obj.value(&ax).abs());
    if gap < floor {
        return Err(Error::NegativeGap {
            gap,
            tolerance: -floor,
        });
    }
    Ok(gap)
}

/// A primal feasible `x`, dual feasible `nu`, their products and gap.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPair {
    pub x: DVector<f64>,
    pub nu: DVector<f64>,
    pub ax: DVector<f64>,
    pub at_nu: DVector<f64>,
    /// Duality gap, clamped at zero.
    pub gap: f64,
}

impl PrimalDualPair {
    pub fn new<O: SmoothObjective + ?Sized>(
        problem: &Problem,
        obj: &O,
        x: &DVector<f64>,
        nu: &DVector<f64>,
    ) -> Result<Self> {
        Self::with_tolerances(problem, obj, x, nu, &FeasibilityTolerances::default())
    }

    pub fn with_tolerances<O: SmoothObjective + ?Sized>(
        problem: &Problem,
        obj: &O,
        x: &DVector<f64>,
        nu: &DVector<f64>,
        tol: &FeasibilityTolerances,
    ) -> Result<Self> {
        check_len("pair: x", problem.ncols(), x.len())?;
        check_len("pair: nu", problem.nrows(), nu.len())?;
        let x = clamp_primal(x, tol)?;
        let ax = problem.mul(&x);
        let at_nu = problem.mul_t(nu);
        Self::from_parts(problem, obj, x, ax, nu.clone(), at_nu, tol)
    }

    /// Assembles a pair from precomputed products `Ax` and `A^T nu`.
    pub fn from_parts<O: SmoothObjective + ?Sized>(
        problem: &Problem,
        obj: &O,
        x: DVector<f64>,
        ax: DVector<f64>,
        nu: DVector<f64>,
        at_nu: DVector<f64>,
        tol: &FeasibilityTolerances,
    ) -> Result<Self> {
        check_dual_feasible(problem, &nu, &at_nu, tol)?;
        let raw = gap_from_parts(obj, &ax, &nu, &at_nu, &x);
        let floor = -tol.gap_rel * (1.0 + obj.value(&ax).abs());
        if raw.is_nan() || raw < floor {
            return Err(Error::NegativeGap {
                gap: raw,
                tolerance: -floor,
            });
        }
        Ok(Self {
            x,
            nu,
            ax,
            at_nu,
            gap: raw.max(0.0),
        })
    }
}

/// Residuals of the four optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `||A^T grad f(Ax) - A^T nu||_inf`
    pub stationarity: f64,
    /// `max(0, -min x)`
    pub primal_violation: f64,
    /// `max(0, -min A^T nu)`
    pub dual_violation: f64,
    /// `max_i |x_i (A^T nu)_i|`
    pub complementarity: f64,
    pub satisfied: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_violation)
            .max(self.dual_violation)
            .max(self.complementarity)
    }
}

pub fn check_kkt<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    tol: f64,
) -> Result<KktReport> {
    check_len("check_kkt: x", problem.ncols(), x.len())?;
    check_len("check_kkt: nu", problem.nrows(), nu.len())?;
    let grad = obj.gradient(&problem.mul(x));
    let stationarity = problem.mul_t(&(grad - nu)).amax();
    let at_nu = problem.mul_t(nu);
    let primal_violation = (-x.min()).max(0.0);
    let dual_violation = (-at_nu.min()).max(0.0);
    let complementarity = x
        .iter()
        .zip(at_nu.iter())
        .map(|(a, b)| (a * b).abs())
        .fold(0.0, f64::max);
    let mut report = KktReport {
        stationarity,
        primal_violation,
        dual_violation,
        complementarity,
        satisfied: false,
    };
    report.satisfied = report.max_residual() <= tol;
    Ok(report)
}
