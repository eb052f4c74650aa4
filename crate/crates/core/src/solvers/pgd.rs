use std::ops::ControlFlow;

use nalgebra::DVector;

use super::{IterateView, IterationHook, SolverTrace, TraceOptions};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::problem::{Problem, SmoothObjective};

/// `1 / (L_f ||A||_2^2)` with the spectral norm resolved to 1e-10.
pub fn default_step_size<O: SmoothObjective + ?Sized>(problem: &Problem, obj: &O) -> Result<f64> {
    let norm = linalg::spectral_norm(problem.matrix(), 1e-10)?;
    Ok(1.0 / (obj.lipschitz() * norm * norm))
}

/// One projected gradient step `max(0, x - t A^T grad f(Ax))`.
pub fn pgd_step<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_len("pgd_step: x", problem.ncols(), x.len())?;
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {t}"
        )));
    }
    let grad = problem.mul_t(&obj.gradient(&problem.mul(x)));
    let mut out = x.clone();
    linalg::projected_step(out.as_mut_slice(), grad.as_slice(), t);
    Ok(out)
}

/// Projected gradient iterate together with its image `A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdState {
    pub x: DVector<f64>,
    pub ax: DVector<f64>,
    pub step: f64,
}

impl PgdState {
    pub fn new(problem: &Problem, x0: DVector<f64>, step: f64) -> Self {
        let ax = problem.mul(&x0);
        Self { x: x0, ax, step }
    }

    /// Applies a step given the full gradient `A^T grad f(Ax)` and the new image.
    pub(crate) fn apply(&mut self, grad: &DVector<f64>) {
        linalg::projected_step(self.x.as_mut_slice(), grad.as_slice(), self.step);
    }

    pub fn advance<O: SmoothObjective + ?Sized>(&mut self, problem: &Problem, obj: &O) {
        let grad = problem.mul_t(&obj.gradient(&self.ax));
        self.apply(&grad);
        self.ax = problem.mul(&self.x);
    }
}

/// Runs `max_iters` projected gradient steps from `x0`, calling `hook` after each.
pub fn pgd_solve<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x0: &DVector<f64>,
    t: f64,
    max_iters: usize,
    opts: &TraceOptions,
    hook: &mut IterationHook<'_>,
) -> Result<SolverTrace> {
    check_len("pgd_solve: x0", problem.ncols(), x0.len())?;
    check_len("pgd_solve: objective", problem.nrows(), obj.dim())?;
    if let Some(i) = x0.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::PrimalInfeasible {
            index: i,
            value: x0[i],
        });
    }
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {t}"
        )));
    }
    let mut state = PgdState::new(problem, x0.clone(), t);
    let mut trace = SolverTrace::start(&state.x, &state.ax, t);
    for k in 1..=max_iters {
        state.advance(problem, obj);
        if state.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        trace.record(opts, k, &state.x, obj.value(&state.ax));
        let view = IterateView {
            iteration: k,
            x: &state.x,
            ax: &state.ax,
        };
        if let ControlFlow::Break(()) = hook(&view) {
            trace.stopped_early = k < max_iters;
            break;
        }
    }
    trace.final_x = state.x;
    trace.final_ax = state.ax;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_nnls_objective;
    use nalgebra::DMatrix;

    #[test]
    fn zero_rhs_keeps_origin() {
        let p = Problem::new(DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 - 2.0)).unwrap();
        let obj = make_nnls_objective(DVector::zeros(3)).unwrap();
        let x = pgd_step(&p, &obj, &DVector::zeros(4), 0.1).unwrap();
        assert_eq!(x, DVector::zeros(4));
    }

    #[test]
    fn zero_iterations_returns_start() {
        let p = Problem::new(DMatrix::identity(2, 2)).unwrap();
        let obj = make_nnls_objective(DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let x0 = DVector::from_vec(vec![0.5, 0.25]);
        let trace = pgd_solve(&p, &obj, &x0, 0.5, 0, &TraceOptions::default(), &mut |_| {
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(trace.final_x, x0);
        assert_eq!(trace.iterations_run, 0);
        assert!(trace.objective_values.is_empty());
    }

    #[test]
    fn oversized_step_diverges() {
        // Opposed columns: the iterate ping-pongs between coordinates, growing 4t per step.
        let p = Problem::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
        let obj = make_nnls_objective(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let err = pgd_solve(
            &p,
            &obj,
            &DVector::zeros(2),
            10.0,
            10_000,
            &TraceOptions::default(),
            &mut |_| ControlFlow::Continue(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn hook_can_stop_early() {
        let p = Problem::new(DMatrix::identity(2, 2)).unwrap();
        let obj = make_nnls_objective(DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let trace = pgd_solve(
            &p,
            &obj,
            &DVector::zeros(2),
            0.5,
            100,
            &TraceOptions { record_every: 1 },
            &mut |v| {
                if v.iteration == 3 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            },
        )
        .unwrap();
        assert_eq!(trace.iterations_run, 3);
        assert!(trace.stopped_early);
        assert_eq!(trace.iterates.len(), 3);
    }
}
