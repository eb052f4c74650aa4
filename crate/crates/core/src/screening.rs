//! Safe feature elimination.
//!
//! Given a feasible pair with gap `eps`, the dual optimum lies in the ball of
//! radius `r = sqrt(2 L eps)` around `nu_hat`. A column whose inner product
//! with every point of that region is positive has `x*_i = 0` in every
//! solution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::problem::{PrimalDualPair, Problem, SmoothObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMethod {
    Sphere,
    Dome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    /// Lower bound on `<a_i, nu*>` per column.
    pub lower_bounds: Vec<f64>,
    /// `lower_bounds[i] > margin`.
    pub eliminated: Vec<bool>,
    pub radius: f64,
    pub method: ScreenMethod,
    /// Dome subproblems that were numerically empty and fell back to the sphere value.
    pub degenerate: usize,
}

impl ScreeningResult {
    pub fn eliminated_count(&self) -> usize {
        self.eliminated.iter().filter(|&&e| e).count()
    }

    pub fn eliminated_indices(&self) -> Vec<usize> {
        self.eliminated
            .iter()
            .enumerate()
            .filter_map(|(i, &e)| e.then_some(i))
            .collect()
    }
}

/// `sqrt(2 L eps)`.
pub fn screening_radius(lipschitz: f64, gap: f64) -> f64 {
    (2.0 * lipschitz * gap.max(0.0)).sqrt()
}

/// `min <a_i, nu>` over the ball `||nu - nu_hat|| <= r`.
pub fn sphere_bound(a_dot_nu: f64, norm_a: f64, r: f64) -> f64 {
    a_dot_nu - r * norm_a
}

/// Sphere test from `A^T nu_hat` and column norms.
pub fn sphere_screen_parts(
    at_nu: &DVector<f64>,
    column_norms: &DVector<f64>,
    r: f64,
    margin: f64,
) -> ScreeningResult {
    let lower_bounds: Vec<f64> = at_nu
        .iter()
        .zip(column_norms.iter())
        .map(|(&d, &n)| sphere_bound(d, n, r))
        .collect();
    let eliminated = lower_bounds.iter().map(|&v| v > margin).collect();
    ScreeningResult {
        lower_bounds,
        eliminated,
        radius: r,
        method: ScreenMethod::Sphere,
        degenerate: 0,
    }
}

pub fn sphere_screen<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    pair: &PrimalDualPair,
) -> Result<ScreeningResult> {
    check_len("sphere_screen: A^T nu", problem.ncols(), pair.at_nu.len())?;
    let r = screening_radius(obj.lipschitz(), pair.gap);
    Ok(sphere_screen_parts(
        &pair.at_nu,
        problem.column_norms(),
        r,
        0.0,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomeBound {
    pub value: f64,
    /// The ball misses the halfspace numerically; `value` is the sphere bound.
    pub degenerate: bool,
}

/// `min <a_i, nu>` over the ball `||nu - nu_hat|| <= r` cut by `<a_j, nu> >= 0`.
///
/// Uses only `gram = A^T A` and `at_nu = A^T nu_hat`. Never below the sphere bound.
pub fn dome_bound(
    i: usize,
    j: usize,
    r: f64,
    gram: &DMatrix<f64>,
    at_nu: &DVector<f64>,
) -> DomeBound {
    let aa = gram[(i, i)].max(0.0);
    let norm_a = aa.sqrt();
    let sphere = sphere_bound(at_nu[i], norm_a, r);
    let plain = DomeBound {
        value: sphere,
        degenerate: false,
    };
    if i == j {
        return DomeBound {
            value: sphere.max(0.0),
            degenerate: false,
        };
    }
    let gg = gram[(j, j)];
    if !(gg > 0.0) || r == 0.0 {
        return plain;
    }
    let norm_g = gg.sqrt();
    let alpha = gram[(i, j)] / norm_g;
    let delta = -at_nu[j] / norm_g;
    if delta > r {
        return DomeBound {
            value: sphere,
            degenerate: true,
        };
    }
    let inactive = norm_a == 0.0 || delta <= -r * alpha / norm_a;
    if inactive {
        return plain;
    }
    let perp_sq = (aa - alpha * alpha).max(0.0) + 4.0 * f64::EPSILON * aa;
    let rho = (r * r - delta * delta).max(0.0).sqrt();
    let dome = at_nu[i] + alpha * delta - rho * perp_sq.sqrt();
    DomeBound {
        value: dome.max(sphere),
        degenerate: false,
    }
}

/// Dome test from `A^T A`, `A^T nu_hat` and a radius: best halfspace per column.
pub fn dome_screen_parts(
    gram: &DMatrix<f64>,
    at_nu: &DVector<f64>,
    r: f64,
    margin: f64,
) -> ScreeningResult {
    let n = at_nu.len();
    let per_column = |i: usize| {
        (0..n).fold((f64::NEG_INFINITY, 0usize), |(best, deg), j| {
            let d = dome_bound(i, j, r, gram, at_nu);
            (best.max(d.value), deg + d.degenerate as usize)
        })
    };
    let rows: Vec<(f64, usize)> = if n * n >= 1 << 16 {
        (0..n).into_par_iter().map(per_column).collect()
    } else {
        (0..n).map(per_column).collect()
    };
    let lower_bounds: Vec<f64> = rows.iter().map(|r| r.0).collect();
    ScreeningResult {
        eliminated: lower_bounds.iter().map(|&v| v > margin).collect(),
        lower_bounds,
        radius: r,
        method: ScreenMethod::Dome,
        degenerate: rows.iter().map(|r| r.1).sum(),
    }
}

/// Dome test; requires the Gram matrix to have been cached on `problem`.
pub fn dome_screen<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    pair: &PrimalDualPair,
) -> Result<ScreeningResult> {
    check_len("dome_screen: A^T nu", problem.ncols(), pair.at_nu.len())?;
    let gram = problem.gram().ok_or(Error::MissingGram)?;
    let r = screening_radius(obj.lipschitz(), pair.gap);
    Ok(dome_screen_parts(gram, &pair.at_nu, r, 0.0))
}

/// Runs the requested test with an explicit elimination margin.
pub fn screen<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    pair: &PrimalDualPair,
    method: ScreenMethod,
    margin: f64,
) -> Result<ScreeningResult> {
    let r = screening_radius(obj.lipschitz(), pair.gap);
    check_len("screen: A^T nu", problem.ncols(), pair.at_nu.len())?;
    match method {
        ScreenMethod::Sphere => Ok(sphere_screen_parts(
            &pair.at_nu,
            problem.column_norms(),
            r,
            margin,
        )),
        ScreenMethod::Dome => {
            let gram = problem.gram().ok_or(Error::MissingGram)?;
            Ok(dome_screen_parts(gram, &pair.at_nu, r, margin))
        }
    }
}

/// `min_{i in I} <a_i, nu_hat> / (||a_i|| sqrt(2L))`.
///
/// Once `sqrt(eps)` drops below this value the sphere test eliminates all of `I`.
pub fn elimination_threshold<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    at_nu: &DVector<f64>,
    indices: &[usize],
) -> Result<f64> {
    check_len(
        "elimination_threshold: A^T nu",
        problem.ncols(),
        at_nu.len(),
    )?;
    if indices.is_empty() {
        return Err(Error::InvalidInput("index set is empty".into()));
    }
    let norms = problem.column_norms();
    let mut best = f64::INFINITY;
    for &i in indices {
        if i >= problem.ncols() {
            return Err(Error::InvalidInput(format!(
                "column index {i} out of range"
            )));
        }
        if norms[i] == 0.0 {
            return Err(Error::InvalidInput(format!("column {i} is zero")));
        }
        best = best.min(at_nu[i] / norms[i]);
    }
    Ok((best / (2.0 * obj.lipschitz()).sqrt()).max(0.0))
}
