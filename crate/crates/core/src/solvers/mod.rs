//! Primal solvers for `min f(Ax) s.t. x >= 0`.
//!
//! The first-order methods expose their per-iteration state so the batch
//! driver can stack many right-hand sides into matrix-matrix products.

mod accelerated;
mod active_set;
mod pgd;

use std::ops::ControlFlow;

use nalgebra::DVector;

pub use accelerated::{accelerated_solve, AcceleratedOptions, AcceleratedState};
pub use active_set::{active_set_nnls, NnlsOptions, NnlsStatus};
pub use pgd::{default_step_size, pgd_solve, pgd_step, PgdState};

/// The iterate handed to per-iteration hooks.
#[derive(Debug, Clone, Copy)]
pub struct IterateView<'a> {
    /// Number of completed iterations.
    pub iteration: usize,
    pub x: &'a DVector<f64>,
    /// `A x` for the same iterate.
    pub ax: &'a DVector<f64>,
}

/// How much of the iterate history to keep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceOptions {
    /// Store every `record_every`-th iterate; 0 keeps none.
    pub record_every: usize,
}

/// Output of an iterative primal solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    /// `(iteration, x)` for the recorded iterates.
    pub iterates: Vec<(usize, DVector<f64>)>,
    /// `f(A x^k)` for k = 1..=iterations_run.
    pub objective_values: Vec<f64>,
    pub final_x: DVector<f64>,
    pub final_ax: DVector<f64>,
    /// Fixed step for PGD; final `1/L` estimate for the accelerated method.
    pub step_size: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

impl SolverTrace {
    pub(crate) fn start(x0: &DVector<f64>, ax0: &DVector<f64>, step_size: f64) -> Self {
        Self {
            iterates: Vec::new(),
            objective_values: Vec::new(),
            final_x: x0.clone(),
            final_ax: ax0.clone(),
            step_size,
            iterations_run: 0,
            stopped_early: false,
        }
    }

    pub(crate) fn record(
        &mut self,
        opts: &TraceOptions,
        iteration: usize,
        x: &DVector<f64>,
        objective: f64,
    ) {
        self.iterations_run = iteration;
        self.objective_values.push(objective);
        if opts.record_every > 0 && iteration.is_multiple_of(opts.record_every) {
            self.iterates.push((iteration, x.clone()));
        }
    }
}

/// Per-iteration hook; return `ControlFlow::Break(())` to stop the solver.
pub type IterationHook<'a> = dyn FnMut(&IterateView<'_>) -> ControlFlow<()> + 'a;
