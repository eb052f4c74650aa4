//! Dense kernels shared by the single-problem and batched drivers.
//!
//! Every product accumulates each output entry in a fixed order that does not
//! depend on how many right-hand sides are processed together, so a problem
//! solved inside a batch produces bit-identical iterates to the same problem
//! solved alone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Work size (rows x cols x rhs) above which the batched kernels fan out to rayon.
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out = A * x` for a column-major `A` (m x n).
fn mul_into(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let m = a.nrows();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (l, &s) in x.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let col = &a.as_slice()[l * m..(l + 1) * m];
        for (o, &c) in out.iter_mut().zip(col) {
            *o += s * c;
        }
    }
}

/// `A x`.
pub fn mul(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    mul_into(a, x.as_slice(), out.as_mut_slice());
    out
}

/// `A^T y`.
pub fn mul_t(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let m = a.nrows();
    DVector::from_iterator(
        a.ncols(),
        a.as_slice()
            .chunks_exact(m)
            .map(|col| dot(col, y.as_slice())),
    )
}

/// `A X` for a block of right-hand sides stored as the columns of `x`.
pub fn mul_batch(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let k = x.ncols();
    let mut out = DMatrix::zeros(m, k);
    let work = m * n * k;
    let body = |(xc, oc): (&[f64], &mut [f64])| mul_into(a, xc, oc);
    if work > PAR_THRESHOLD && k > 1 {
        x.as_slice()
            .par_chunks_exact(n)
            .zip(out.as_mut_slice().par_chunks_exact_mut(m))
            .for_each(body);
    } else {
        x.as_slice()
            .chunks_exact(n)
            .zip(out.as_mut_slice().chunks_exact_mut(m))
            .for_each(body);
    }
    out
}

/// `A^T Y` for a block of dual vectors stored as the columns of `y`.
pub fn mul_t_batch(a: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let k = y.ncols();
    // Row-major scratch: entry (l, j) at l * k + j, so each column of A is read once per block.
    let mut scratch = vec![0.0; n * k];
    let body = |(l, row): (usize, &mut [f64])| {
        let col = &a.as_slice()[l * m..(l + 1) * m];
        for (j, v) in row.iter_mut().enumerate() {
            *v = dot(col, &y.as_slice()[j * m..(j + 1) * m]);
        }
    };
    if m * n * k > PAR_THRESHOLD {
        scratch.par_chunks_exact_mut(k).enumerate().for_each(body);
    } else {
        scratch.chunks_exact_mut(k).enumerate().for_each(body);
    }
    DMatrix::from_row_slice(n, k, &scratch)
}

/// In-place projected gradient step `x <- max(0, x - t g)`.
pub(crate) fn projected_step(x: &mut [f64], g: &[f64], t: f64) {
    for (xi, gi) in x.iter_mut().zip(g) {
        let v = *xi - t * gi;
        *xi = if v > 0.0 { v } else { 0.0 };
    }
}

/// Largest absolute column sum.
pub fn norm_one(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Extreme singular values `(sigma_min, sigma_max)` of a dense matrix.
///
/// For a wide matrix this is the smallest of the `min(m, n)` singular values.
pub fn singular_value_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 || a.ncols() == 0 {
        return (0.0, 0.0);
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (min, max)
}

fn start_vectors(n: usize) -> impl Iterator<Item = DVector<f64>> {
    let ones = DVector::from_element(n, 1.0);
    let alternating = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let ramp = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    [ones, alternating, ramp].into_iter().map(|v| v.normalize())
}

/// Spectral norm `||A||_2` by power iteration on `A^T A`.
///
/// Starts from the normalized all-ones vector so the result is reproducible.
/// Falls back to other fixed start vectors when the iterate collapses (start
/// orthogonal to every dominant direction).
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("spectral norm of the zero matrix".into()));
    }
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let resid_tol = 0.1 * tol.max(f64::EPSILON).sqrt();
    const MAX_ITERS: usize = 200_000;

    for mut v in start_vectors(a.ncols()) {
        let mut rho = 0.0;
        let mut collapsed = false;
        let mut prev = f64::NAN;
        for iter in 0..MAX_ITERS {
            let w = mul_t(a, &mul(a, &v));
            rho = v.dot(&w);
            let wn = w.norm();
            if wn <= 1e-14 * scale * scale {
                collapsed = true;
                break;
            }
            let resid = (&w - &v * rho).norm();
            let stalled = iter > 50 && (rho - prev).abs() <= f64::EPSILON * rho;
            if resid <= resid_tol * rho || stalled {
                break;
            }
            prev = rho;
            v = w / wn;
        }
        if !collapsed && rho > 0.0 {
            return Ok(rho.sqrt());
        }
    }
    Err(Error::Degenerate(
        "power iteration collapsed for every start vector".into(),
    ))
}
