//! Auslender-Teboulle accelerated projected gradient with backtracking on the
//! local Lipschitz estimate and gradient-based adaptive restart.

use std::ops::ControlFlow;

use nalgebra::DVector;

use super::{IterateView, IterationHook, SolverTrace, TraceOptions};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::problem::{Problem, SmoothObjective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceleratedOptions {
    /// Starting Lipschitz estimate for `x -> f(Ax)`; `None` uses `L_f ||A||^2`.
    pub initial_lipschitz: Option<f64>,
    /// Multiplier applied to the estimate when the sufficient-decrease test fails.
    pub backtrack_factor: f64,
    /// Step growth at the start of every iteration (estimate divided by this).
    pub growth_factor: f64,
    pub restart: bool,
    pub max_backtracks: usize,
}

impl Default for AcceleratedOptions {
    fn default() -> Self {
        Self {
            initial_lipschitz: None,
            backtrack_factor: 2.0,
            growth_factor: 1.1,
            restart: true,
            max_backtracks: 64,
        }
    }
}

/// One problem's accelerated-method state, advanced by a caller that owns the
/// matrix products: `begin` -> (`propose` -> `take_gradient` -> `finish`)+.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratedState {
    pub x: DVector<f64>,
    pub ax: DVector<f64>,
    z: DVector<f64>,
    theta: f64,
    lipschitz: f64,
    x_old: DVector<f64>,
    z_old: DVector<f64>,
    theta_old: f64,
    lipschitz_old: f64,
    y: DVector<f64>,
    ay: DVector<f64>,
    grad_y: DVector<f64>,
    backtracks: usize,
}

impl AcceleratedState {
    pub fn new(x0: DVector<f64>, ax0: DVector<f64>, lipschitz: f64) -> Self {
        Self {
            z: x0.clone(),
            x_old: x0.clone(),
            z_old: x0.clone(),
            y: x0.clone(),
            grad_y: DVector::zeros(x0.len()),
            ay: ax0.clone(),
            x: x0,
            ax: ax0,
            theta: f64::INFINITY,
            lipschitz,
            theta_old: f64::INFINITY,
            lipschitz_old: lipschitz,
            backtracks: 0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn begin(&mut self, opts: &AcceleratedOptions) {
        self.x_old.copy_from(&self.x);
        self.z_old.copy_from(&self.z);
        self.theta_old = self.theta;
        self.lipschitz_old = self.lipschitz;
        self.lipschitz /= opts.growth_factor;
        self.backtracks = 0;
    }

    /// Extrapolated point `y` whose gradient is needed next.
    pub fn propose(&mut self) -> &DVector<f64> {
        let ratio = self.lipschitz / self.lipschitz_old;
        self.theta = 2.0 / (1.0 + (1.0 + 4.0 * ratio / (self.theta_old * self.theta_old)).sqrt());
        let th = self.theta;
        for ((y, xo), zo) in self
            .y
            .iter_mut()
            .zip(self.x_old.iter())
            .zip(self.z_old.iter())
        {
            *y = (1.0 - th) * xo + th * zo;
        }
        &self.y
    }

    /// Takes `A y` and `A^T grad f(A y)`; returns the candidate iterate.
    pub fn take_gradient(&mut self, ay: DVector<f64>, grad_y: DVector<f64>) -> &DVector<f64> {
        self.ay = ay;
        self.grad_y = grad_y;
        let step = 1.0 / (self.theta * self.lipschitz);
        self.z.copy_from(&self.z_old);
        linalg::projected_step(self.z.as_mut_slice(), self.grad_y.as_slice(), step);
        let th = self.theta;
        for ((x, xo), z) in self.x.iter_mut().zip(self.x_old.iter()).zip(self.z.iter()) {
            *x = (1.0 - th) * xo + th * z;
        }
        &self.x
    }

    /// Sufficient-decrease test with the candidate's image `A x`.
    ///
    /// Uses `L_f ||A(x - y)||^2 <= L ||x - y||^2`, which bounds the quadratic
    /// model error without evaluating `f`. Returns `false` when the step must be
    /// retried with a larger estimate.
    pub fn finish(&mut self, ax: DVector<f64>, lf: f64, opts: &AcceleratedOptions) -> bool {
        self.ax = ax;
        let xy_sq: f64 = self
            .x
            .iter()
            .zip(self.y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if xy_sq > 0.0 && self.backtracks < opts.max_backtracks {
            let axy_sq: f64 = self
                .ax
                .iter()
                .zip(self.ay.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let local = lf * axy_sq / xy_sq;
            if local > self.lipschitz * (1.0 + 1e-12) {
                self.lipschitz = local.max(self.lipschitz * opts.backtrack_factor);
                self.backtracks += 1;
                return false;
            }
        }
        if opts.restart {
            let progress: f64 = self
                .grad_y
                .iter()
                .zip(self.x.iter().zip(self.x_old.iter()))
                .map(|(g, (x, xo))| g * (x - xo))
                .sum();
            if progress > 0.0 {
                self.theta = f64::INFINITY;
                self.z.copy_from(&self.x);
            }
        }
        true
    }
}

/// Accelerated projected gradient for `max_iters` outer iterations.
pub fn accelerated_solve<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x0: &DVector<f64>,
    max_iters: usize,
    opts: &AcceleratedOptions,
    trace_opts: &TraceOptions,
    hook: &mut IterationHook<'_>,
) -> Result<SolverTrace> {
    check_len("accelerated_solve: x0", problem.ncols(), x0.len())?;
    check_len("accelerated_solve: objective", problem.nrows(), obj.dim())?;
    if let Some(i) = x0.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::PrimalInfeasible {
            index: i,
            value: x0[i],
        });
    }
    let lf = obj.lipschitz();
    let l0 = match opts.initial_lipschitz {
        Some(l) if l > 0.0 => l,
        Some(l) => {
            return Err(Error::InvalidInput(format!(
                "initial Lipschitz estimate {l}"
            )))
        }
        None => {
            let s = linalg::spectral_norm(problem.matrix(), 1e-10)?;
            lf * s * s
        }
    };
    let mut state = AcceleratedState::new(x0.clone(), problem.mul(x0), l0);
    let mut trace = SolverTrace::start(&state.x, &state.ax, 1.0 / l0);
    for k in 1..=max_iters {
        state.begin(opts);
        loop {
            let y = state.propose();
            let ay = problem.mul(y);
            let grad = problem.mul_t(&obj.gradient(&ay));
            let x = state.take_gradient(ay, grad);
            let ax = problem.mul(x);
            if state.finish(ax, lf, opts) {
                break;
            }
        }
        if state.x.iter().any(|v| !v.is_finite()) || !state.lipschitz().is_finite() {
            return Err(Error::Divergence { iteration: k });
        }
        trace.record(trace_opts, k, &state.x, obj.value(&state.ax));
        trace.step_size = 1.0 / state.lipschitz();
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
