//! Screening loop and batch driver.
//!
//! A [`ScreeningSession`] consumes primal iterates at checkpoints, builds a
//! dual feasible point by line search, screens, and attempts certification.
//! The solver itself is never altered by screening.

use std::ops::ControlFlow;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::{
    certify_positive_optimum, certify_unique, iterate_distance_bound, CertificationMethod,
    CertificationReport, DEFAULT_RANK_TOL,
};
use crate::dual::{
    dual_line_search, strict_feasible_clip, strict_feasible_lp, strict_feasible_ones,
    StrictFeasibleCertificate, StrictLpOptions, StrictMethod,
};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::problem::{
    make_nnls_objective, FeasibilityTolerances, LeastSquares, PrimalDualPair, Problem,
    SmoothObjective,
};
use crate::screening::{
    dome_screen_parts, screening_radius, sphere_screen_parts, ScreenMethod, ScreeningResult,
};
use crate::solvers::{
    accelerated_solve, active_set_nnls, default_step_size, pgd_solve, AcceleratedOptions,
    AcceleratedState, NnlsOptions, PgdState, SolverTrace, TraceOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Pgd,
    Accel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictStrategy {
    Clip,
    Ones,
    Lp,
    /// clip, then ones, then lp
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub max_iters: usize,
    /// Screen every `screen_every` iterations (and at the last one).
    pub screen_every: usize,
    pub screen_method: ScreenMethod,
    pub nu_strict_strategy: StrictStrategy,
    /// Fixed anchor overriding the strategy.
    pub nu_strict: Option<Vec<f64>>,
    /// Rescale the LP anchor to unit l1 norm.
    pub lp_l1_normalize: bool,
    pub stop_on_certify: bool,
    pub rank_tol: f64,
    /// Columns are eliminated when their lower bound exceeds this.
    pub margin: f64,
    pub tolerances: FeasibilityTolerances,
    /// PGD step; `None` uses `1/(L ||A||^2)`.
    pub step_size: Option<f64>,
    /// Assume `A` is in general linear position for the positive-optimum route.
    pub glp_known: bool,
    /// Keep every checkpoint's screening result.
    pub keep_history: bool,
    /// Solve uncertified batch problems with the active-set method at the end.
    pub finish_with_active_set: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Pgd,
            max_iters: 1000,
            screen_every: 1,
            screen_method: ScreenMethod::Sphere,
            nu_strict_strategy: StrictStrategy::Auto,
            nu_strict: None,
            lp_l1_normalize: false,
            stop_on_certify: true,
            rank_tol: DEFAULT_RANK_TOL,
            margin: 0.0,
            tolerances: FeasibilityTolerances::default(),
            step_size: None,
            glp_known: false,
            keep_history: true,
            finish_with_active_set: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.screen_every == 0 {
            return Err(Error::InvalidInput(
                "screen_every must be at least 1".into(),
            ));
        }
        if let Some(t) = self.step_size {
            if !(t > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "step size must be positive, got {t}"
                )));
            }
        }
        if !(self.rank_tol >= 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidInput(
                "rank_tol and margin must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn is_checkpoint(&self, k: usize) -> bool {
        k == self.max_iters || (k > 0 && k.is_multiple_of(self.screen_every))
    }
}

/// Per-checkpoint record; the CSV trace is one row per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub gap: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub t_star: f64,
    pub strict_method: StrictMethod,
    /// Cumulative count under the configured test.
    pub eliminated: usize,
    pub sphere_eliminated: usize,
    pub dome_eliminated: Option<usize>,
    /// Uniqueness certified by the reduction route at or before this checkpoint.
    pub certified: bool,
    pub sphere_certified: bool,
    pub dome_certified: Option<bool>,
    pub positive_optimum: bool,
    pub distance_bound: Option<f64>,
}

/// Screening results of a single checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointScreens {
    pub iteration: usize,
    pub sphere: ScreeningResult,
    pub dome: Option<ScreeningResult>,
}

/// Strict anchors that depend only on `A`, computed at most once.
#[derive(Debug, Default)]
pub struct AnchorCache {
    ones: OnceLock<std::result::Result<StrictFeasibleCertificate, String>>,
    lp: OnceLock<std::result::Result<StrictFeasibleCertificate, LpFailure>>,
}

#[derive(Debug)]
enum LpFailure {
    NoStrictPoint(f64),
    Other(String),
}

impl AnchorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn ones(&self, a: &DMatrix<f64>) -> Result<&StrictFeasibleCertificate> {
        self.ones
            .get_or_init(|| {
                strict_feasible_ones(a).map_err(|e| match e {
                    Error::ConditionFailed(m) => m,
                    other => other.to_string(),
                })
            })
            .as_ref()
            .map_err(|m| Error::ConditionFailed(m.clone()))
    }

    fn lp(&self, a: &DMatrix<f64>, l1: bool) -> Result<&StrictFeasibleCertificate> {
        self.lp
            .get_or_init(|| {
                let opts = StrictLpOptions {
                    l1_normalize: l1,
                    ..Default::default()
                };
                strict_feasible_lp(a, &opts).map_err(|e| match e {
                    Error::NoStrictPoint { margin } => LpFailure::NoStrictPoint(margin),
                    other => LpFailure::Other(other.to_string()),
                })
            })
            .as_ref()
            .map_err(|f| match f {
                LpFailure::NoStrictPoint(margin) => Error::NoStrictPoint { margin: *margin },
                LpFailure::Other(m) => {
                    Error::ConditionFailed(format!("strict-feasibility LP: {m}"))
                }
            })
    }
}

enum Anchor<'a> {
    Borrowed(&'a StrictFeasibleCertificate),
    Owned(StrictFeasibleCertificate),
}

impl Anchor<'_> {
    fn get(&self) -> &StrictFeasibleCertificate {
        match self {
            Anchor::Borrowed(c) => c,
            Anchor::Owned(c) => c,
        }
    }
}

/// Tracks screening and certification state across the checkpoints of one run.
pub struct ScreeningSession<'a, O: SmoothObjective + ?Sized> {
    problem: &'a Problem,
    obj: &'a O,
    config: &'a RunConfig,
    anchors: &'a AnchorCache,
    fixed_anchor: Option<StrictFeasibleCertificate>,
    sphere_mask: Vec<bool>,
    dome_mask: Option<Vec<bool>>,
    sphere_cert: Option<(usize, CertificationReport)>,
    dome_cert: Option<(usize, CertificationReport)>,
    pub checkpoints: Vec<Checkpoint>,
    pub screens: Vec<CheckpointScreens>,
    pub safe_report: Option<CertificationReport>,
    pub positive_report: Option<CertificationReport>,
    pub last_pair: Option<PrimalDualPair>,
}

impl<'a, O: SmoothObjective + ?Sized> ScreeningSession<'a, O> {
    pub fn new(
        problem: &'a Problem,
        obj: &'a O,
        config: &'a RunConfig,
        anchors: &'a AnchorCache,
    ) -> Result<Self> {
        config.validate()?;
        check_len("session: objective", problem.nrows(), obj.dim())?;
        let fixed_anchor = match &config.nu_strict {
            Some(v) => Some(StrictFeasibleCertificate::from_point(
                problem.matrix(),
                DVector::from_column_slice(v),
                StrictMethod::Lp,
            )?),
            None => None,
        };
        let dome = config.screen_method == ScreenMethod::Dome;
        if dome {
            problem.ensure_gram();
        }
        let n = problem.ncols();
        Ok(Self {
            problem,
            obj,
            config,
            anchors,
            fixed_anchor,
            sphere_mask: vec![false; n],
            dome_mask: dome.then(|| vec![false; n]),
            sphere_cert: None,
            dome_cert: None,
            checkpoints: Vec::new(),
            screens: Vec::new(),
            safe_report: None,
            positive_report: None,
            last_pair: None,
        })
    }

    /// Cumulative elimination mask under the configured test.
    pub fn eliminated(&self) -> &[bool] {
        self.dome_mask.as_deref().unwrap_or(&self.sphere_mask)
    }

    pub fn sphere_mask(&self) -> &[bool] {
        &self.sphere_mask
    }

    pub fn dome_mask(&self) -> Option<&[bool]> {
        self.dome_mask.as_deref()
    }

    pub fn certified(&self) -> bool {
        self.safe_report.is_some() || self.positive_report.as_ref().is_some_and(|r| r.unique)
    }

    fn anchor(&self, nu_prime: &DVector<f64>) -> Result<Anchor<'_>> {
        let a = self.problem.matrix();
        if let Some(c) = &self.fixed_anchor {
            return Ok(Anchor::Borrowed(c));
        }
        let l1 = self.config.lp_l1_normalize;
        match self.config.nu_strict_strategy {
            StrictStrategy::Ones => self.anchors.ones(a).map(Anchor::Borrowed),
            StrictStrategy::Lp => self.anchors.lp(a, l1).map(Anchor::Borrowed),
            StrictStrategy::Clip => match strict_feasible_clip(a, nu_prime) {
                Ok(c) => Ok(Anchor::Owned(c)),
                Err(_) => self.anchors.lp(a, l1).map(Anchor::Borrowed),
            },
            StrictStrategy::Auto => match strict_feasible_clip(a, nu_prime) {
                Ok(c) => Ok(Anchor::Owned(c)),
                Err(_) => match self.anchors.ones(a) {
                    Ok(c) => Ok(Anchor::Borrowed(c)),
                    Err(_) => self.anchors.lp(a, l1).map(Anchor::Borrowed),
                },
            },
        }
    }

    /// Checkpoint at iterate `x` with image `ax`; computes `nu' = grad f(ax)` and `A^T nu'`.
    pub fn observe_iterate(
        &mut self,
        k: usize,
        x: &DVector<f64>,
        ax: &DVector<f64>,
    ) -> Result<bool> {
        let nu_prime = self.obj.gradient(ax);
        let at_nu_prime = self.problem.mul_t(&nu_prime);
        self.observe(k, x, ax, nu_prime, at_nu_prime)
    }

    /// Checkpoint with precomputed `nu'` and `A^T nu'`.
    ///
    /// Returns `true` when the run should stop (certified and `stop_on_certify`).
    pub fn observe(
        &mut self,
        k: usize,
        x: &DVector<f64>,
        ax: &DVector<f64>,
        nu_prime: DVector<f64>,
        at_nu_prime: DVector<f64>,
    ) -> Result<bool> {
        let problem = self.problem;
        let obj = self.obj;
        let config = self.config;
        let (ls, strict_method) = {
            let anchor = self.anchor(&nu_prime)?;
            let a = anchor.get();
            (
                dual_line_search(&at_nu_prime, &a.at_nu, &nu_prime, &a.nu)?,
                a.method,
            )
        };
        let pair = PrimalDualPair::from_parts(
            problem,
            obj,
            x.clone(),
            ax.clone(),
            ls.nu,
            ls.at_nu,
            &config.tolerances,
        )?;
        let r = screening_radius(obj.lipschitz(), pair.gap);
        let sphere = sphere_screen_parts(&pair.at_nu, problem.column_norms(), r, config.margin);
        let dome = self.dome_mask.as_ref().map(|_| {
            let gram = problem.ensure_gram();
            dome_screen_parts(gram, &pair.at_nu, r, config.margin)
        });

        merge(&mut self.sphere_mask, &sphere.eliminated);
        if let (Some(mask), Some(d)) = (self.dome_mask.as_mut(), dome.as_ref()) {
            merge(mask, &d.eliminated);
        }

        let sphere_cert = refresh_cert(
            problem,
            &self.sphere_mask,
            config.rank_tol,
            &mut self.sphere_cert,
        )?;
        let dome_cert = match &self.dome_mask {
            Some(mask) => Some(refresh_cert(
                problem,
                mask,
                config.rank_tol,
                &mut self.dome_cert,
            )?),
            None => None,
        };
        let active = dome_cert.as_ref().unwrap_or(&sphere_cert);
        let certified = active.unique;
        let distance_bound = if certified {
            Some(iterate_distance_bound(
                problem,
                obj,
                &pair,
                self.eliminated(),
                active.sigma_min,
            )?)
        } else {
            None
        };
        if certified && self.safe_report.is_none() {
            let mut rep = active.clone().with_gap(pair.gap).at_iteration(k);
            rep.distance_bound = distance_bound;
            rep.positive_optimum = self.positive_report.is_some();
            self.safe_report = Some(rep);
        }

        let mut positive = self.positive_report.is_some();
        if problem.nrows() < problem.ncols() && !positive {
            let rep =
                certify_positive_optimum(problem, obj, &pair.nu, &pair.at_nu, config.glp_known)?;
            if rep.positive_optimum {
                positive = true;
                let mut rep = rep.at_iteration(k);
                rep.gap = pair.gap;
                rep.r = self.eliminated().iter().filter(|&&e| e).count();
                self.positive_report = Some(rep);
            }
        }

        self.checkpoints.push(Checkpoint {
            iteration: k,
            gap: pair.gap,
            primal_value: obj.value(&pair.ax),
            dual_value: obj.dual_value(&pair.nu),
            t_star: ls.t_star,
            strict_method,
            eliminated: count(self.eliminated()),
            sphere_eliminated: count(&self.sphere_mask),
            dome_eliminated: self.dome_mask.as_deref().map(count),
            certified,
            sphere_certified: sphere_cert.unique,
            dome_certified: dome_cert.as_ref().map(|c| c.unique),
            positive_optimum: positive,
            distance_bound,
        });
        if config.keep_history {
            self.screens.push(CheckpointScreens {
                iteration: k,
                sphere,
                dome,
            });
        }
        self.last_pair = Some(pair);
        Ok(config.stop_on_certify && self.certified())
    }

    /// Earliest certificate, or an inconclusive report at the last checkpoint.
    pub fn final_report(&self) -> CertificationReport {
        let safe = self.safe_report.as_ref();
        let pos = self.positive_report.as_ref().filter(|r| r.unique);
        match (safe, pos) {
            (Some(s), Some(p)) if p.iterations < s.iterations => p.clone(),
            (Some(s), _) => s.clone(),
            (None, Some(p)) => p.clone(),
            (None, None) => {
                let m = self.problem.nrows();
                let r = count(self.eliminated());
                let gap = self.last_pair.as_ref().map_or(f64::INFINITY, |p| p.gap);
                let mut rep =
                    CertificationReport::inconclusive(r, (m, self.problem.ncols() - r), gap);
                if let Some(c) = self.cached_cert() {
                    rep.sigma_min = c.sigma_min;
                    rep.sigma_max = c.sigma_max;
                }
                rep.positive_optimum = self.positive_report.is_some();
                rep
            }
        }
    }

    fn cached_cert(&self) -> Option<&CertificationReport> {
        let c = if self.dome_mask.is_some() {
            &self.dome_cert
        } else {
            &self.sphere_cert
        };
        c.as_ref().map(|(_, r)| r)
    }

    /// Iteration of the first reduction certificate.
    pub fn safe_certified_at(&self) -> Option<usize> {
        self.safe_report.as_ref().and_then(|r| r.iterations)
    }

    /// Iteration at which `g(nu_hat) > 0` was first observed.
    pub fn positive_optimum_at(&self) -> Option<usize> {
        self.positive_report.as_ref().and_then(|r| r.iterations)
    }
}

fn merge(mask: &mut [bool], new: &[bool]) {
    for (m, &e) in mask.iter_mut().zip(new) {
        *m |= e;
    }
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&e| e).count()
}

/// Re-certifies only when the cumulative mask has grown.
fn refresh_cert(
    problem: &Problem,
    mask: &[bool],
    rank_tol: f64,
    cache: &mut Option<(usize, CertificationReport)>,
) -> Result<CertificationReport> {
    let c = count(mask);
    if let Some((cached, rep)) = cache {
        if *cached == c {
            return Ok(rep.clone());
        }
    }
    let rep = certify_unique(problem, mask, rank_tol)?;
    *cache = Some((c, rep.clone()));
    Ok(rep)
}

/// Outcome of [`run_screening_loop`].
#[derive(Debug, Clone)]
pub struct ScreeningRun {
    pub trace: SolverTrace,
    pub checkpoints: Vec<Checkpoint>,
    pub screens: Vec<CheckpointScreens>,
    pub report: CertificationReport,
    /// Cumulative elimination mask under the configured test.
    pub eliminated: Vec<bool>,
    pub sphere_eliminated: Vec<bool>,
    pub dome_eliminated: Option<Vec<bool>>,
    pub safe_certified_at: Option<usize>,
    pub positive_optimum_at: Option<usize>,
    pub final_pair: Option<PrimalDualPair>,
}

/// Solves from `x0`, screening and certifying at every checkpoint.
pub fn run_screening_loop<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x0: &DVector<f64>,
    config: &RunConfig,
) -> Result<ScreeningRun> {
    let anchors = AnchorCache::new();
    run_screening_loop_with(problem, obj, x0, config, &anchors)
}

/// [`run_screening_loop`] with a caller-owned anchor cache.
pub fn run_screening_loop_with<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    x0: &DVector<f64>,
    config: &RunConfig,
    anchors: &AnchorCache,
) -> Result<ScreeningRun> {
    let mut session = ScreeningSession::new(problem, obj, config, anchors)?;
    let mut failure: Option<Error> = None;
    let trace = {
        let mut hook = |v: &crate::solvers::IterateView<'_>| {
            if !config.is_checkpoint(v.iteration) {
                return ControlFlow::Continue(());
            }
            match session.observe_iterate(v.iteration, v.x, v.ax) {
                Ok(true) => ControlFlow::Break(()),
                Ok(false) => ControlFlow::Continue(()),
                Err(e) => {
                    failure = Some(e);
                    ControlFlow::Break(())
                }
            }
        };
        let trace_opts = TraceOptions::default();
        match config.solver {
            SolverKind::Pgd => {
                let t = match config.step_size {
                    Some(t) => t,
                    None => default_step_size(problem, obj)?,
                };
                pgd_solve(
                    problem,
                    obj,
                    x0,
                    t,
                    config.max_iters,
                    &trace_opts,
                    &mut hook,
                )?
            }
            SolverKind::Accel => accelerated_solve(
                problem,
                obj,
                x0,
                config.max_iters,
                &accel_options(problem, obj, config)?,
                &trace_opts,
                &mut hook,
            )?,
        }
    };
    if let Some(e) = failure {
        return Err(e);
    }
    if config.max_iters == 0 {
        session.observe_iterate(0, &trace.final_x, &trace.final_ax)?;
    }
    Ok(ScreeningRun {
        report: session.final_report(),
        eliminated: session.eliminated().to_vec(),
        sphere_eliminated: session.sphere_mask().to_vec(),
        dome_eliminated: session.dome_mask().map(<[bool]>::to_vec),
        safe_certified_at: session.safe_certified_at(),
        positive_optimum_at: session.positive_optimum_at(),
        final_pair: session.last_pair.take(),
        checkpoints: std::mem::take(&mut session.checkpoints),
        screens: std::mem::take(&mut session.screens),
        trace,
    })
}

fn accel_options<O: SmoothObjective + ?Sized>(
    problem: &Problem,
    obj: &O,
    config: &RunConfig,
) -> Result<AcceleratedOptions> {
    let lip = match config.step_size {
        Some(t) => 1.0 / t,
        None => {
            let s = linalg::spectral_norm(problem.matrix(), 1e-10)?;
            obj.lipschitz() * s * s
        }
    };
    Ok(AcceleratedOptions {
        initial_lipschitz: Some(lip),
        ..Default::default()
    })
}

/// Per-right-hand-side outcome of [`batch_certify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub index: usize,
    pub report: Option<CertificationReport>,
    pub error: Option<String>,
    /// Cumulative eliminated columns under the configured test.
    pub eliminated: Vec<usize>,
    pub sphere_eliminated: Vec<usize>,
    pub dome_eliminated: Option<Vec<usize>>,
    pub iterations_run: usize,
    pub safe_certified_at: Option<usize>,
    pub positive_optimum_at: Option<usize>,
    pub finished_by_active_set: bool,
}

/// Aggregates over all non-failed problems at one checkpoint iteration.
///
/// Problems that already left the batch contribute their last state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchCheckpoint {
    pub iteration: usize,
    pub active: usize,
    pub sphere_fraction: f64,
    pub dome_fraction: Option<f64>,
    pub sphere_certified: usize,
    pub dome_certified: Option<usize>,
    pub certified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub problems: Vec<BatchItem>,
    pub checkpoints: Vec<BatchCheckpoint>,
    pub certified_count: usize,
    /// Mean over non-failed problems of the eliminated fraction of columns.
    pub eliminated_fraction: f64,
    pub failed_count: usize,
}

enum BatchSolver {
    Pgd(PgdState),
    Accel(Box<AcceleratedState>),
}

struct Lane<'a> {
    session: ScreeningSession<'a, LeastSquares>,
    solver: BatchSolver,
    done: bool,
    error: Option<String>,
    iterations: usize,
    last: Option<Checkpoint>,
}

/// Runs the screening loop for every column of `rhs` on the shared matrix,
/// stacking all active problems into matrix-matrix products.
///
/// Per-problem results are bitwise identical to [`run_screening_loop`].
pub fn batch_certify(
    problem: &Problem,
    rhs: &DMatrix<f64>,
    config: &RunConfig,
) -> Result<BatchReport> {
    config.validate()?;
    check_len("batch_certify: rhs rows", problem.nrows(), rhs.nrows())?;
    if rhs.ncols() == 0 {
        return Err(Error::InvalidInput(
            "batch needs at least one right-hand side".into(),
        ));
    }
    let (n, k_rhs) = (problem.ncols(), rhs.ncols());
    let objectives: Vec<LeastSquares> = rhs
        .column_iter()
        .map(|c| make_nnls_objective(c.clone_owned()))
        .collect::<Result<_>>()?;
    let anchors = AnchorCache::new();
    let spectral = linalg::spectral_norm(problem.matrix(), 1e-10)?;
    let x0 = DVector::zeros(n);
    let ax0 = problem.mul(&x0);

    let mut lanes: Vec<Lane<'_>> = Vec::with_capacity(k_rhs);
    for obj in &objectives {
        let lip = obj.lipschitz() * spectral * spectral;
        let solver = match config.solver {
            SolverKind::Pgd => BatchSolver::Pgd(PgdState {
                x: x0.clone(),
                ax: ax0.clone(),
                step: config.step_size.unwrap_or(1.0 / lip),
            }),
            SolverKind::Accel => BatchSolver::Accel(Box::new(AcceleratedState::new(
                x0.clone(),
                ax0.clone(),
                config.step_size.map_or(lip, |t| 1.0 / t),
            ))),
        };
        lanes.push(Lane {
            session: ScreeningSession::new(problem, obj, config, &anchors)?,
            solver,
            done: false,
            error: None,
            iterations: 0,
            last: None,
        });
    }

    let mut checkpoints = Vec::new();
    let accel_opts = AcceleratedOptions::default();
    for k in 0..=config.max_iters {
        let active: Vec<usize> = (0..k_rhs).filter(|&i| !lanes[i].done).collect();
        if active.is_empty() {
            break;
        }
        let at_checkpoint = config.is_checkpoint(k) || (k == 0 && config.max_iters == 0);
        let needs_grad =
            at_checkpoint || matches!(config.solver, SolverKind::Pgd) && k < config.max_iters;
        let mut grads: Vec<Option<(DVector<f64>, DVector<f64>)>> = vec![None; k_rhs];
        if needs_grad {
            let g: Vec<DVector<f64>> = active
                .iter()
                .map(|&i| objectives[i].gradient(current_ax(&lanes[i].solver)))
                .collect();
            let at_g = linalg::mul_t_batch(problem.matrix(), &stack(&g, problem.nrows()));
            for (c, (&i, gi)) in active.iter().zip(g).enumerate() {
                grads[i] = Some((gi, at_g.column(c).clone_owned()));
            }
        }
        if at_checkpoint {
            for &i in &active {
                let lane = &mut lanes[i];
                let (nu, at_nu) = grads[i].clone().expect("gradient computed at checkpoint");
                let (x, ax) = current(&lane.solver);
                match lane.session.observe(k, &x.clone(), &ax.clone(), nu, at_nu) {
                    Ok(stop) => {
                        lane.last = lane.session.checkpoints.last().cloned();
                        if !config.keep_history {
                            lane.session.screens.clear();
                        }
                        if stop {
                            lane.done = true;
                        }
                    }
                    Err(e) => {
                        lane.error = Some(e.to_string());
                        lane.done = true;
                    }
                }
            }
            checkpoints.push(aggregate(k, &lanes, config, n));
        }
        if k == config.max_iters {
            break;
        }
        let stepping: Vec<usize> = active.into_iter().filter(|&i| !lanes[i].done).collect();
        match config.solver {
            SolverKind::Pgd => {
                for &i in &stepping {
                    if let BatchSolver::Pgd(s) = &mut lanes[i].solver {
                        s.apply(&grads[i].as_ref().expect("gradient computed").1);
                    }
                }
                let xs: Vec<DVector<f64>> = stepping
                    .iter()
                    .map(|&i| current(&lanes[i].solver).0.clone())
                    .collect();
                let ax = linalg::mul_batch(problem.matrix(), &stack(&xs, n));
                for (c, &i) in stepping.iter().enumerate() {
                    if let BatchSolver::Pgd(s) = &mut lanes[i].solver {
                        s.ax = ax.column(c).clone_owned();
                    }
                }
            }
            SolverKind::Accel => {
                accel_batch_step(problem, &objectives, &mut lanes, &stepping, &accel_opts, n);
            }
        }
        for &i in &stepping {
            let lane = &mut lanes[i];
            lane.iterations = k + 1;
            if current(&lane.solver).0.iter().any(|v| !v.is_finite()) {
                lane.error = Some(Error::Divergence { iteration: k + 1 }.to_string());
                lane.done = true;
            }
        }
    }

    let mut problems = Vec::with_capacity(k_rhs);
    for (i, lane) in lanes.iter().enumerate() {
        let mut item = BatchItem {
            index: i,
            report: lane.error.is_none().then(|| lane.session.final_report()),
            error: lane.error.clone(),
            eliminated: indices(lane.session.eliminated()),
            sphere_eliminated: indices(lane.session.sphere_mask()),
            dome_eliminated: lane.session.dome_mask().map(indices),
            iterations_run: lane.iterations,
            safe_certified_at: lane.session.safe_certified_at(),
            positive_optimum_at: lane.session.positive_optimum_at(),
            finished_by_active_set: false,
        };
        if config.finish_with_active_set
            && lane.error.is_none()
            && !item.report.as_ref().is_some_and(|r| r.unique)
        {
            match finish_with_active_set(problem, &objectives[i], config) {
                Ok(rep) if rep.unique => {
                    item.report = Some(rep);
                    item.finished_by_active_set = true;
                }
                Ok(_) => {}
                Err(e) => item.error = Some(e.to_string()),
            }
        }
        problems.push(item);
    }
    let ok: Vec<&BatchItem> = problems.iter().filter(|p| p.error.is_none()).collect();
    let certified_count = ok
        .iter()
        .filter(|p| p.report.as_ref().is_some_and(|r| r.unique))
        .count();
    let eliminated_fraction = if ok.is_empty() {
        0.0
    } else {
        ok.iter()
            .map(|p| p.eliminated.len() as f64 / n as f64)
            .sum::<f64>()
            / ok.len() as f64
    };
    Ok(BatchReport {
        failed_count: problems.len() - ok.len(),
        problems,
        checkpoints,
        certified_count,
        eliminated_fraction,
    })
}

fn current(s: &BatchSolver) -> (&DVector<f64>, &DVector<f64>) {
    match s {
        BatchSolver::Pgd(p) => (&p.x, &p.ax),
        BatchSolver::Accel(a) => (&a.x, &a.ax),
    }
}

fn current_ax(s: &BatchSolver) -> &DVector<f64> {
    current(s).1
}

fn stack(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (c, v) in cols.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &e)| e.then_some(i))
        .collect()
}

fn accel_batch_step(
    problem: &Problem,
    objectives: &[LeastSquares],
    lanes: &mut [Lane<'_>],
    stepping: &[usize],
    opts: &AcceleratedOptions,
    n: usize,
) {
    let m = problem.nrows();
    let mut pending: Vec<usize> = stepping.to_vec();
    for &i in &pending {
        if let BatchSolver::Accel(s) = &mut lanes[i].solver {
            s.begin(opts);
        }
    }
    while !pending.is_empty() {
        let ys: Vec<DVector<f64>> = pending
            .iter()
            .map(|&i| match &mut lanes[i].solver {
                BatchSolver::Accel(s) => s.propose().clone(),
                BatchSolver::Pgd(_) => unreachable!("accelerated lane"),
            })
            .collect();
        let ay = linalg::mul_batch(problem.matrix(), &stack(&ys, n));
        let ay_cols: Vec<DVector<f64>> = (0..pending.len())
            .map(|c| ay.column(c).clone_owned())
            .collect();
        let g: Vec<DVector<f64>> = pending
            .iter()
            .zip(&ay_cols)
            .map(|(&i, a)| objectives[i].gradient(a))
            .collect();
        let at_g = linalg::mul_t_batch(problem.matrix(), &stack(&g, m));
        let xs: Vec<DVector<f64>> = pending
            .iter()
            .enumerate()
            .map(|(c, &i)| match &mut lanes[i].solver {
                BatchSolver::Accel(s) => s
                    .take_gradient(ay_cols[c].clone(), at_g.column(c).clone_owned())
                    .clone(),
                BatchSolver::Pgd(_) => unreachable!("accelerated lane"),
            })
            .collect();
        let ax = linalg::mul_batch(problem.matrix(), &stack(&xs, n));
        let mut retry = Vec::new();
        for (c, &i) in pending.iter().enumerate() {
            let lf = objectives[i].lipschitz();
            if let BatchSolver::Accel(s) = &mut lanes[i].solver {
                if !s.finish(ax.column(c).clone_owned(), lf, opts) {
                    retry.push(i);
                }
            }
        }
        pending = retry;
    }
}

fn aggregate(k: usize, lanes: &[Lane<'_>], config: &RunConfig, n: usize) -> BatchCheckpoint {
    let ok: Vec<&Checkpoint> = lanes
        .iter()
        .filter(|l| l.error.is_none())
        .filter_map(|l| l.last.as_ref())
        .collect();
    let denom = (ok.len().max(1) * n) as f64;
    let dome = config.screen_method == ScreenMethod::Dome;
    BatchCheckpoint {
        iteration: k,
        active: lanes.iter().filter(|l| !l.done).count(),
        sphere_fraction: ok.iter().map(|c| c.sphere_eliminated).sum::<usize>() as f64 / denom,
        dome_fraction: dome
            .then(|| ok.iter().filter_map(|c| c.dome_eliminated).sum::<usize>() as f64 / denom),
        sphere_certified: ok.iter().filter(|c| c.sphere_certified).count(),
        dome_certified: dome.then(|| ok.iter().filter(|c| c.dome_certified == Some(true)).count()),
        certified: ok.iter().filter(|c| c.certified).count(),
    }
}

/// Certifies a straggler from a high-accuracy active-set solution.
fn finish_with_active_set(
    problem: &Problem,
    obj: &LeastSquares,
    config: &RunConfig,
) -> Result<CertificationReport> {
    let (x, _) = active_set_nnls(problem.matrix(), obj.rhs(), &NnlsOptions::default())?;
    let ax = problem.mul(&x);
    let nu = obj.gradient(&ax);
    let at_nu = problem.mul_t(&nu);
    let pair = PrimalDualPair::from_parts(problem, obj, x, ax, nu, at_nu, &config.tolerances)?;
    let r = screening_radius(obj.lipschitz(), pair.gap);
    let mask = match config.screen_method {
        ScreenMethod::Sphere => {
            sphere_screen_parts(&pair.at_nu, problem.column_norms(), r, config.margin).eliminated
        }
        ScreenMethod::Dome => {
            dome_screen_parts(problem.ensure_gram(), &pair.at_nu, r, config.margin).eliminated
        }
    };
    let mut rep = certify_unique(problem, &mask, config.rank_tol)?.with_gap(pair.gap);
    if rep.unique {
        rep.distance_bound = Some(iterate_distance_bound(
            problem,
            obj,
            &pair,
            &mask,
            rep.sigma_min,
        )?);
    }
    Ok(if rep.unique {
        rep
    } else {
        CertificationReport {
            method: CertificationMethod::Inconclusive,
            ..rep
        }
    })
}
