//! Uniqueness certificates for NNLS.
//!
//! Two routes: screening leaves at most `m` columns forming a full-rank
//! matrix (the reduced objective is then strongly convex), or the optimal
//! value is provably positive and `A` is in general linear position.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::problem::{
    check_dual_feasible, gap_from_parts, FeasibilityTolerances, PrimalDualPair, Problem,
    SmoothObjective,
};

/// Default relative singular-value threshold for "full rank".
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Default relative threshold for subset independence in [`glp_check`].
pub const DEFAULT_GLP_TOL: f64 = 1e-10;
/// Largest number of column subsets [`glp_check`] will enumerate.
pub const GLP_SUBSET_LIMIT: u128 = 1_000_000;

/// Columns surviving elimination, in original order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub a_red: DMatrix<f64>,
    /// `index_map[k]` is the original index of reduced column `k`.
    pub index_map: Vec<usize>,
    pub n_original: usize,
}

impl ReducedProblem {
    /// Zero-pads a reduced vector back to full length.
    pub fn expand(&self, x_red: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("expand", self.index_map.len(), x_red.len())?;
        let mut x = DVector::zeros(self.n_original);
        for (k, &i) in self.index_map.iter().enumerate() {
            x[i] = x_red[k];
        }
        Ok(x)
    }
}

pub fn reduce_problem(problem: &Problem, eliminated: &[bool]) -> Result<ReducedProblem> {
    check_len("reduce_problem: mask", problem.ncols(), eliminated.len())?;
    let index_map: Vec<usize> = (0..eliminated.len()).filter(|&i| !eliminated[i]).collect();
    if index_map.is_empty() {
        return Err(Error::AllEliminated);
    }
    Ok(ReducedProblem {
        a_red: problem.matrix().select_columns(&index_map),
        index_map,
        n_original: problem.ncols(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationMethod {
    SafeReduction,
    GlpPositiveOptimum,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub unique: bool,
    pub method: CertificationMethod,
    /// Number of eliminated columns.
    pub r: usize,
    pub reduced_shape: (usize, usize),
    /// `sigma_min(A_red)`; absent when no reduced matrix was formed.
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    /// Bound on `||x_hat - x*||`.
    pub distance_bound: Option<f64>,
    pub gap: f64,
    pub iterations: Option<usize>,
    /// `g(nu_hat) > 0` was observed, so the optimal value is positive.
    pub positive_optimum: bool,
    /// Cap on the support size of the unique solution, when the GLP route applies.
    pub max_nonzeros: Option<usize>,
}

impl CertificationReport {
    pub fn inconclusive(r: usize, reduced_shape: (usize, usize), gap: f64) -> Self {
        Self {
            unique: false,
            method: CertificationMethod::Inconclusive,
            r,
            reduced_shape,
            sigma_min: None,
            sigma_max: None,
            distance_bound: None,
            gap,
            iterations: None,
            positive_optimum: false,
            max_nonzeros: None,
        }
    }

    /// Records the gap of the certifying pair and, for the reduction route,
    /// `distance_bound(gap, sigma_min)`, which holds for iterates vanishing on
    /// the eliminated columns; see [`iterate_distance_bound`] otherwise.
    pub fn with_gap(mut self, gap: f64) -> Self {
        self.gap = gap;
        self.distance_bound = match (self.method, self.sigma_min) {
            (CertificationMethod::SafeReduction, Some(s)) if s > 0.0 => distance_bound(gap, s).ok(),
            _ => None,
        };
        self
    }

    pub fn at_iteration(mut self, k: usize) -> Self {
        self.iterations = Some(k);
        self
    }
}

/// Certifies uniqueness from an elimination mask produced by a safe test.
///
/// Unique iff at most `m` columns remain and `sigma_min(A_red) > rank_tol * sigma_max(A_red)`.
pub fn certify_unique(
    problem: &Problem,
    eliminated: &[bool],
    rank_tol: f64,
) -> Result<CertificationReport> {
    check_len("certify_unique: mask", problem.ncols(), eliminated.len())?;
    let m = problem.nrows();
    let r = eliminated.iter().filter(|&&e| e).count();
    let kept = problem.ncols() - r;
    let mut report = CertificationReport::inconclusive(r, (m, kept), 0.0);
    if kept == 0 {
        report.unique = true;
        report.method = CertificationMethod::SafeReduction;
        return Ok(report);
    }
    if kept > m {
        return Ok(report);
    }
    let reduced = reduce_problem(problem, eliminated)?;
    let (smin, smax) = linalg::singular_value_range(&reduced.a_red);
    report.sigma_min = Some(smin);
    report.sigma_max = Some(smax);
    if smin > rank_tol * smax {
        report.unique = true;
        report.method = CertificationMethod::SafeReduction;
    }
    Ok(report)
}

/// `sqrt(2 eps) / sigma_min(A_red)`, a bound on `||x_hat - x*||`.
pub fn distance_bound(gap: f64, sigma_min_red: f64) -> Result<f64> {
    if !(sigma_min_red > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma_min must be positive, got {sigma_min_red:e}"
        )));
    }
    if !(gap >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "gap must be nonnegative, got {gap:e}"
        )));
    }
    Ok((2.0 * gap).sqrt() / sigma_min_red)
}

/// Bound on `||x_hat - x*||` for any primal feasible `x_hat` after a safe reduction.
///
/// Zeroing the eliminated coordinates of `x_hat` gives a feasible point of the
/// reduced problem, bounded through its own gap against the same `nu_hat`; the
/// discarded part `||x_hat_E||` is added back. Reduces to
/// `distance_bound(gap, sigma_min)` when `x_hat` vanishes on the eliminated set.
/// With every column eliminated `x* = 0` and the bound is `||x_hat||`.
pub fn iterate_distance_bound<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    pair: &PrimalDualPair,
    eliminated: &[bool],
    sigma_min_red: Option<f64>,
) -> Result<f64> {
    check_len(
        "iterate_distance_bound: mask",
        problem.ncols(),
        eliminated.len(),
    )?;
    let mut x_red = pair.x.clone();
    let mut dropped = 0.0;
    for (v, &e) in x_red.iter_mut().zip(eliminated) {
        if e {
            dropped += *v * *v;
            *v = 0.0;
        }
    }
    let dropped = dropped.sqrt();
    if eliminated.iter().all(|&e| e) {
        return Ok(dropped);
    }
    let sigma = sigma_min_red
        .ok_or_else(|| Error::InvalidInput("sigma_min of the reduced matrix is required".into()))?;
    let gap = if dropped == 0.0 {
        pair.gap
    } else {
        let ax = problem.mul(&x_red);
        gap_from_parts(obj, &ax, &pair.nu, &pair.at_nu, &x_red).max(0.0)
    };
    Ok(dropped + distance_bound(gap, sigma)?)
}

fn binomial_capped(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > cap {
            return c;
        }
    }
    c
}

/// Every `min(m, n)` columns are linearly independent (relative threshold `tol`).
pub fn glp_check(a: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let k = m.min(n);
    let subsets = binomial_capped(n, k, GLP_SUBSET_LIMIT);
    if subsets > GLP_SUBSET_LIMIT {
        return Err(Error::Intractable {
            subsets,
            limit: GLP_SUBSET_LIMIT,
        });
    }
    let independent = |cols: Vec<usize>| {
        let (smin, smax) = linalg::singular_value_range(&a.select_columns(&cols));
        smax > 0.0 && smin > tol * smax
    };
    Ok((0..n).combinations(k).par_bridge().all(independent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// `max_{i != j} |<a_i, a_j>| / (||a_i|| ||a_j||)`
    pub mu: f64,
    /// `floor(1/mu) + 1 <= spark(A)`; absent when `mu = 0`.
    pub spark_lower_bound: Option<usize>,
}

pub fn coherence(problem: &Problem) -> Result<CoherenceReport> {
    let n = problem.ncols();
    if n < 2 {
        return Err(Error::InvalidInput(
            "coherence needs at least two columns".into(),
        ));
    }
    let norms = problem.column_norms();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::InvalidInput(format!("column {i} is zero")));
    }
    let a = problem.matrix();
    let mut mu: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = match problem.gram() {
                Some(g) => g[(i, j)],
                None => linalg::dot(a.column(i).as_slice(), a.column(j).as_slice()),
            };
            mu = mu.max(c.abs() / (norms[i] * norms[j]));
        }
    }
    let mu = mu.min(1.0);
    Ok(CoherenceReport {
        mu,
        spark_lower_bound: (mu > 0.0).then(|| (1.0 / mu).floor() as usize + 1),
    })
}

/// Weak-duality route: `g(nu_hat) > 0` proves `p* > 0`; with GLP the solution is unique.
pub fn certify_positive_optimum<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    nu_hat: &DVector<f64>,
    at_nu: &DVector<f64>,
    glp_known: bool,
) -> Result<CertificationReport> {
    let (m, n) = (problem.nrows(), problem.ncols());
    if m >= n {
        return Err(Error::InvalidInput(format!(
            "positive-optimum route needs m < n, got {m}x{n}"
        )));
    }
    check_len("certify_positive_optimum: nu", m, nu_hat.len())?;
    check_len("certify_positive_optimum: A^T nu", n, at_nu.len())?;
    check_dual_feasible(problem, nu_hat, at_nu, &FeasibilityTolerances::default())?;
    let mut report = CertificationReport::inconclusive(0, (m, n), 0.0);
    report.positive_optimum = obj.dual_value(nu_hat) > 0.0;
    if report.positive_optimum && glp_known {
        report.unique = true;
        report.method = CertificationMethod::GlpPositiveOptimum;
        report.max_nonzeros = Some(m - 1);
    }
    Ok(report)
}

/// Partition of the columns by the complementarity pattern of an optimal pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    /// `x*_i > tol`
    pub support: Vec<usize>,
    /// `x*_i <= tol` and `<a_i, nu*> > tol`: the eliminable zeros.
    pub strict_zeros: Vec<usize>,
    /// Both at most `tol`: zeros no safe test can remove.
    pub weak: Vec<usize>,
}

impl ComplementarityReport {
    pub fn is_strict(&self) -> bool {
        self.weak.is_empty()
    }
}

pub fn strict_complementarity_report(
    x_star: &DVector<f64>,
    nu_star: &DVector<f64>,
    at_nu_star: &DVector<f64>,
    tol: f64,
) -> Result<ComplementarityReport> {
    check_len(
        "strict_complementarity_report: A^T nu",
        x_star.len(),
        at_nu_star.len(),
    )?;
    if nu_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("nu* is not finite".into()));
    }
    let scale = 1.0 + x_star.amax() * at_nu_star.amax();
    let mut out = ComplementarityReport {
        support: Vec::new(),
        strict_zeros: Vec::new(),
        weak: Vec::new(),
    };
    for (i, (&x, &s)) in x_star.iter().zip(at_nu_star.iter()).enumerate() {
        if x < -tol || s < -tol || (x * s).abs() > tol * scale {
            return Err(Error::InvalidInput(format!(
                "pair is not optimal at column {i}: x = {x:e}, <a_i, nu> = {s:e}"
            )));
        }
        if x > tol {
            out.support.push(i);
        } else if s > tol {
            out.strict_zeros.push(i);
        } else {
            out.weak.push(i);
        }
    }
    Ok(out)
}
