//! Dense two-phase tableau simplex with Dantzig pricing and a Bland fallback.
//!
//! Sized for the small LPs of the dual module (a few hundred rows and
//! columns); every pivot touches the full tableau.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowKind {
    Le,
    Ge,
    Eq,
}

/// `maximize c^T x s.t. rows, x >= 0`.
#[derive(Debug, Clone, Default)]
pub(crate) struct LinearProgram {
    pub c: Vec<f64>,
    pub rows: Vec<(Vec<f64>, RowKind, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-11;
/// Consecutive degenerate pivots before pricing falls back to Bland's rule.
const DEGENERATE_RUN_LIMIT: usize = 20;
/// Relative size of the right-hand-side perturbation on inequality rows.
const PERTURBATION: f64 = 1e-9;

struct Tableau {
    /// Rows of `B^-1 [A | b_perturbed | b]`.
    t: Vec<Vec<f64>>,
    /// Reduced-cost row; the last entry holds minus the objective value.
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Minimizes the current reduced-cost row over columns in `allowed`.
    /// Returns `false` when unbounded.
    ///
    /// Prices by most negative reduced cost and switches to Bland's rule
    /// during runs of degenerate pivots.
    fn optimize(&mut self, allowed: &[bool], max_pivots: usize) -> Result<bool> {
        let w = self.width;
        let mut degenerate_run = 0;
        for _ in 0..max_pivots {
            let candidates = (0..w).filter(|&j| allowed[j] && self.obj[j] < -PIVOT_EPS);
            let entering = if degenerate_run >= DEGENERATE_RUN_LIMIT {
                candidates.min()
            } else {
                candidates.min_by(|&x, &y| self.obj[x].total_cmp(&self.obj[y]))
            };
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[c] > PIVOT_EPS {
                    let ratio = row[w] / row[c];
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 * br.abs().max(1.0)
                                || (ratio <= br + 1e-14 * br.abs().max(1.0)
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = best else {
                return Ok(false);
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::NoConvergence {
            iterations: max_pivots,
        })
    }
}

pub(crate) fn maximize(lp: &LinearProgram) -> Result<LpOutcome> {
    let nv = lp.c.len();
    let m = lp.rows.len();
    if lp.rows.iter().any(|(a, _, _)| a.len() != nv) {
        return Err(Error::InvalidInput(
            "LP row length differs from objective".into(),
        ));
    }
    // Normalize to nonnegative right-hand sides.
    let rows: Vec<(Vec<f64>, RowKind, f64)> = lp
        .rows
        .iter()
        .map(|(a, k, b)| {
            if *b < 0.0 {
                let flipped = match k {
                    RowKind::Le => RowKind::Ge,
                    RowKind::Ge => RowKind::Le,
                    RowKind::Eq => RowKind::Eq,
                };
                (a.iter().map(|v| -v).collect(), flipped, -b)
            } else {
                (a.clone(), *k, *b)
            }
        })
        .collect();

    let rhs_scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
    let n_slack = rows.iter().filter(|r| r.1 != RowKind::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != RowKind::Le).count();
    let width = nv + n_slack + n_art;
    let art_start = nv + n_slack;

    let mut t = vec![vec![0.0; width + 2]; m];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (nv, art_start);
    for (i, (coef, kind, b)) in rows.iter().enumerate() {
        t[i][..nv].copy_from_slice(coef);
        t[i][width] = *b;
        t[i][width + 1] = *b;
        match kind {
            RowKind::Le => {
                // distinct perturbations break ties at degenerate vertices
                let golden = (i as f64 * 0.618_033_988_749_895).fract();
                t[i][width] += PERTURBATION * rhs_scale * (1.0 + golden);
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            RowKind::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            RowKind::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }

    let max_pivots = 50 * (m + width).max(100);
    let mut tab = Tableau {
        t,
        obj: vec![0.0; width + 1],
        basis,
        width,
    };

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        for (i, row) in tab.t.iter().enumerate() {
            if tab.basis[i] >= art_start {
                for (j, v) in tab.obj.iter_mut().enumerate() {
                    if j < art_start || j == width {
                        *v -= row[j];
                    }
                }
            }
        }
        let allowed = vec![true; width];
        tab.optimize(&allowed, max_pivots)?;
        if -tab.obj[width] > 1e-9 * rhs_scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive zero-valued artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| tab.t[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    // Phase 2 on -c (minimization form).
    let mut obj = vec![0.0; width + 1];
    for (o, c) in obj.iter_mut().zip(&lp.c) {
        *o = -c;
    }
    for (i, row) in tab.t.iter().enumerate() {
        let b = tab.basis[i];
        let cb = if b < nv { -lp.c[b] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=width {
                obj[j] -= cb * row[j];
            }
        }
    }
    tab.obj = obj;
    let allowed: Vec<bool> = (0..width).map(|j| j < art_start).collect();
    if !tab.optimize(&allowed, max_pivots)? {
        return Ok(LpOutcome::Unbounded);
    }

    // the optimal basis stays optimal for the unperturbed rhs when it stays feasible
    let exact = tab.t.iter().all(|row| row[width + 1] >= -1e-9 * rhs_scale);
    let col = if exact { width + 1 } else { width };
    let mut x = vec![0.0; nv];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < nv {
            x[b] = tab.t[i][col].max(0.0);
        }
    }
    let value = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}
