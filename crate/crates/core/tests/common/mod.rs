//! Independent reference computations shared by the integration tests.
//!
//! Each oracle takes a different numerical route from the library code it
//! checks: exhaustive support enumeration instead of active-set pivoting,
//! projected gradient and a one-dimensional Lagrangian dual instead of the
//! dome closed form, eigenvalues of `A^T A` instead of an SVD.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use safe_nnls::synth::NormalStream;

pub fn gaussian_matrix(rng: &mut NormalStream, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.normal())
}

pub fn gaussian_vector(rng: &mut NormalStream, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.normal())
}

fn columns(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), idx.len(), |i, j| a[(i, idx[j])])
}

/// Minimum-norm least-squares solution through the pseudo-inverse.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12 * svd.singular_values.max().max(1.0))
        .expect("both factors computed")
}

/// NNLS by enumerating every support; `n <= 16`.
pub fn brute_force_nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    assert!(n <= 16, "support enumeration is exponential in n");
    let mut best = (DVector::zeros(n), 0.5 * b.norm_squared());
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let xs = lstsq(&columns(a, &idx), b);
        if xs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            x[i] = xs[k];
        }
        let val = 0.5 * (a * &x - b).norm_squared();
        if val < best.1 {
            best = (x, val);
        }
    }
    best
}

/// Euclidean projection of `v` onto `{nu : A^T nu >= 0}` by enumerating the
/// active constraint set: each candidate is `v` minus its projection onto
/// `range(A_W)`, and the closest feasible candidate is the projection.
pub fn projection_qp(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    assert!(n <= 16);
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max) * v.norm().max(1.0);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let cand = if idx.is_empty() {
            v.clone()
        } else {
            let aw = columns(a, &idx);
            v - &aw * lstsq(&aw, v)
        };
        if (a.transpose() * &cand).min() < -1e-12 * scale {
            continue;
        }
        let d = (&cand - v).norm();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, cand));
        }
    }
    best.expect("nu = 0 is always feasible").1
}

/// Singular values of `A` as square roots of the eigenvalues of `A^T A`.
pub fn singular_values_via_gram(a: &DMatrix<f64>) -> Vec<f64> {
    let g = a.transpose() * a;
    let mut ev: Vec<f64> = g
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev.truncate(a.nrows().min(a.ncols()));
    ev
}

/// Every `k`-subset of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// GLP by determinants of every `m x m` column subset (`m <= n`).
pub fn glp_by_determinants(a: &DMatrix<f64>, tol: f64) -> bool {
    let m = a.nrows();
    subsets(a.ncols(), m)
        .iter()
        .all(|s| columns(a, s).determinant().abs() > tol)
}

/// Largest absolute cosine between distinct columns.
pub fn coherence_double_loop(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut mu: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = a.column(i).dot(&a.column(j)) / (a.column(i).norm() * a.column(j).norm());
                mu = mu.max(c.abs());
            }
        }
    }
    mu
}

/// Euclidean projection onto `{||nu - c|| <= r} ∩ {<g_hat, nu - c> >= delta}`
/// for a unit `g_hat` and `delta <= r`, by case analysis on the active constraints.
fn project_dome(
    p: &DVector<f64>,
    c: &DVector<f64>,
    r: f64,
    g_hat: &DVector<f64>,
    delta: f64,
) -> DVector<f64> {
    let d = p - c;
    let s = g_hat.dot(&d);
    let h = if s >= delta {
        d.clone()
    } else {
        &d + g_hat * (delta - s)
    };
    if h.norm() <= r {
        return c + h;
    }
    let b = &d * (r / d.norm());
    if g_hat.dot(&b) >= delta {
        return c + b;
    }
    // both constraints active: the nearest point of the boundary circle
    let perp = &d - g_hat * s;
    let rho = (r * r - delta * delta).max(0.0).sqrt();
    let n = perp.norm();
    let dir = if n > 0.0 {
        perp / n
    } else {
        DVector::zeros(p.len())
    };
    c + g_hat * delta + dir * rho
}

/// `min <a, nu>` over the dome by projected gradient with a constant step.
/// Returns `None` when the dome is empty.
pub fn dome_oracle_pg(a: &DVector<f64>, c: &DVector<f64>, r: f64, g: &DVector<f64>) -> Option<f64> {
    let g_hat = g / g.norm();
    let delta = -g_hat.dot(c);
    if delta > r {
        return None;
    }
    let step = 0.25 * r / a.norm();
    let mut x = project_dome(c, c, r, &g_hat, delta);
    for _ in 0..20_000 {
        let next = project_dome(&(&x - a * step), c, r, &g_hat, delta);
        let moved = (&next - &x).norm();
        x = next;
        if moved <= 1e-15 * (1.0 + r) {
            break;
        }
    }
    Some(a.dot(&x))
}

/// `min <a, nu>` over the dome through its one-dimensional Lagrangian dual
/// `max_{mu >= 0} <a, c> + mu delta - r ||a - mu g_hat||`, maximized by
/// golden-section search. Returns `None` when the dome is empty.
pub fn dome_oracle(a: &DVector<f64>, c: &DVector<f64>, r: f64, g: &DVector<f64>) -> Option<f64> {
    let g_hat = g / g.norm();
    // <g_hat, nu - c> >= delta
    let delta = -g_hat.dot(c);
    if delta > r {
        return None;
    }
    let dual = |mu: f64| a.dot(c) + mu * delta - r * (a - &g_hat * mu).norm();
    let mut hi = a.norm().max(1.0);
    while dual(2.0 * hi) > dual(hi) {
        hi *= 2.0;
    }
    let (mut lo, mut hi) = (0.0, 2.0 * hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if dual(m1) < dual(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    Some(dual(0.5 * (lo + hi)).max(dual(0.0)))
}

/// `min <a, nu>` over `{||nu - c|| <= r}` by sampling its boundary.
pub fn sphere_monte_carlo(
    rng: &mut NormalStream,
    a: &DVector<f64>,
    c: &DVector<f64>,
    r: f64,
    samples: usize,
) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let d = gaussian_vector(rng, c.len());
        let s = r / d.norm();
        let p = c + d * s;
        best = best.min(a.dot(&p));
    }
    best
}
