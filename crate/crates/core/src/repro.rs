//! Reproduction pipelines: the 3x5 worked example and the seeded 50x100
//! Gaussian experiment.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::{
    certify_unique, distance_bound, reduce_problem, strict_complementarity_report,
    CertificationReport, DEFAULT_RANK_TOL,
};
use crate::driver::{
    run_screening_loop, AnchorCache, Checkpoint, RunConfig, ScreeningRun, ScreeningSession,
    SolverKind, StrictStrategy,
};
use crate::dual::{
    dual_line_search, orthogonal_project_dual, strict_feasible_lp, StrictFeasibleCertificate,
    StrictLpOptions, StrictMethod,
};
use crate::error::Result;
use crate::problem::{make_nnls_objective, LeastSquares, PrimalDualPair, Problem, SmoothObjective};
use crate::screening::{screening_radius, sphere_screen_parts};
use crate::solvers::{
    active_set_nnls, default_step_size, pgd_solve, IterateView, NnlsOptions, TraceOptions,
};
use crate::synth::{generate_synthetic, SyntheticKind};

/// The 3x5 worked example.
pub fn small_example() -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_row_slice(
        3,
        5,
        &[
            1.0, 6.0, -1.0, 8.0, 0.0, //
            -2.0, 7.0, 1.0, 8.0, 2.0, //
            3.0, 1.0, 4.0, 1.0, -5.0,
        ],
    );
    (a, DVector::from_vec(vec![-1.0, 2.0, 1.0]))
}

/// Strictly feasible anchor for the worked example, as presented (two digits).
pub const PRESENTED_ANCHOR: [f64; 3] = [0.56, 0.34, 0.1];

/// Primal iterate for the worked example, as presented (four digits).
pub const PRESENTED_X_HAT: [f64; 5] = [0.0, 0.0, 0.9282, 0.0, 0.5409];

/// Every intermediate quantity of the worked example at one primal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallPipeline {
    pub x_hat: Vec<f64>,
    pub nu_prime: Vec<f64>,
    pub anchor: Vec<f64>,
    pub t_star: f64,
    pub nu_hat: Vec<f64>,
    pub gap: f64,
    pub sphere_bounds: Vec<f64>,
    pub eliminated: Vec<usize>,
    pub reduced_matrix: Vec<Vec<f64>>,
    pub certification: CertificationReport,
    pub squared_distance_bound: Option<f64>,
    pub projected_nu: Vec<f64>,
    pub projection_gap: f64,
}

/// Line search, gap, sphere test, reduction and projection at `x_hat`.
pub fn small_pipeline(x_hat: &DVector<f64>, anchor: &DVector<f64>) -> Result<SmallPipeline> {
    let (a, b) = small_example();
    let problem = Problem::new(a)?;
    let obj = make_nnls_objective(b)?;
    let strict =
        StrictFeasibleCertificate::from_point(problem.matrix(), anchor.clone(), StrictMethod::Lp)?;
    let ax = problem.mul(x_hat);
    let nu_prime = obj.gradient(&ax);
    let at_prime = problem.mul_t(&nu_prime);
    let ls = dual_line_search(&at_prime, &strict.at_nu, &nu_prime, &strict.nu)?;
    let pair = PrimalDualPair::from_parts(
        &problem,
        &obj,
        x_hat.clone(),
        ax.clone(),
        ls.nu.clone(),
        ls.at_nu.clone(),
        &Default::default(),
    )?;
    let r = screening_radius(obj.lipschitz(), pair.gap);
    let screen = sphere_screen_parts(&pair.at_nu, problem.column_norms(), r, 0.0);
    let reduced = reduce_problem(&problem, &screen.eliminated)?;
    let cert = certify_unique(&problem, &screen.eliminated, DEFAULT_RANK_TOL)?.with_gap(pair.gap);
    let squared = cert
        .sigma_min
        .filter(|_| cert.unique)
        .map(|s| distance_bound(pair.gap, s).map(|d| d * d))
        .transpose()?;

    let projected = orthogonal_project_dual(problem.matrix(), &nu_prime, &NnlsOptions::default())?;
    let proj_pair =
        PrimalDualPair::with_tolerances(&problem, &obj, x_hat, &projected, &Default::default())?;

    Ok(SmallPipeline {
        x_hat: x_hat.as_slice().to_vec(),
        nu_prime: nu_prime.as_slice().to_vec(),
        anchor: anchor.as_slice().to_vec(),
        t_star: ls.t_star,
        nu_hat: ls.nu.as_slice().to_vec(),
        gap: pair.gap,
        sphere_bounds: screen.lower_bounds.clone(),
        eliminated: screen.eliminated_indices(),
        reduced_matrix: reduced
            .a_red
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        certification: cert,
        squared_distance_bound: squared,
        projected_nu: projected.as_slice().to_vec(),
        projection_gap: proj_pair.gap,
    })
}

/// Worked example end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallRepro {
    pub iterations: usize,
    pub step_size: f64,
    /// LP anchor rescaled to unit l1 norm.
    pub lp_anchor: Vec<f64>,
    /// Pipeline at the computed iterate with the presented anchor.
    pub computed: SmallPipeline,
    /// Pipeline at the presented four-digit iterate with the presented anchor.
    pub presented: SmallPipeline,
    pub safe_milestone: Option<usize>,
    pub positive_milestone: Option<usize>,
    pub safe_milestone_lp: Option<usize>,
    pub positive_milestone_lp: Option<usize>,
    pub x_star: Vec<f64>,
}

/// Milestone iterations for a fixed anchor: first reduction certificate and first `g > 0`.
pub fn small_milestones(
    anchor: &DVector<f64>,
    max_iters: usize,
) -> Result<(Option<usize>, Option<usize>)> {
    let (a, b) = small_example();
    let problem = Problem::new(a)?;
    let obj = make_nnls_objective(b)?;
    let cfg = RunConfig {
        max_iters,
        screen_every: 1,
        nu_strict: Some(anchor.as_slice().to_vec()),
        stop_on_certify: false,
        keep_history: false,
        ..Default::default()
    };
    let run = run_screening_loop(&problem, &obj, &DVector::zeros(5), &cfg)?;
    Ok((run.safe_certified_at, run.positive_optimum_at))
}

pub fn repro_small(iterations: usize) -> Result<SmallRepro> {
    let (a, b) = small_example();
    let problem = Problem::new(a.clone())?;
    let obj = make_nnls_objective(b.clone())?;
    let t = default_step_size(&problem, &obj)?;
    let trace = pgd_solve(
        &problem,
        &obj,
        &DVector::zeros(5),
        t,
        iterations,
        &TraceOptions::default(),
        &mut |_| ControlFlow::Continue(()),
    )?;
    let lp = strict_feasible_lp(
        &a,
        &StrictLpOptions {
            l1_normalize: true,
            ..Default::default()
        },
    )?;
    let presented_anchor = DVector::from_column_slice(&PRESENTED_ANCHOR);
    let computed = small_pipeline(&trace.final_x, &presented_anchor)?;
    let presented = small_pipeline(
        &DVector::from_column_slice(&PRESENTED_X_HAT),
        &presented_anchor,
    )?;
    let budget = iterations.max(400);
    let (safe, positive) = small_milestones(&presented_anchor, budget)?;
    let (safe_lp, positive_lp) = small_milestones(&lp.nu, budget)?;
    let (x_star, _) = active_set_nnls(&a, &b, &NnlsOptions::default())?;
    Ok(SmallRepro {
        iterations,
        step_size: t,
        lp_anchor: lp.nu.as_slice().to_vec(),
        computed,
        presented,
        safe_milestone: safe,
        positive_milestone: positive,
        safe_milestone_lp: safe_lp,
        positive_milestone_lp: positive_lp,
        x_star: x_star.as_slice().to_vec(),
    })
}

/// A seeded Gaussian instance together with its high-accuracy solution.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub seed: u64,
    pub problem: Problem,
    pub objective: LeastSquares,
    pub x_star: DVector<f64>,
    pub nu_star: DVector<f64>,
    pub at_nu_star: DVector<f64>,
    pub optimal_value: f64,
}

impl OracleInstance {
    pub fn new(seed: u64, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let (x_star, _) = active_set_nnls(&a, &b, &NnlsOptions::default())?;
        let problem = Problem::new(a)?;
        let objective = make_nnls_objective(b)?;
        let ax = problem.mul(&x_star);
        let nu_star = objective.gradient(&ax);
        let at_nu_star = problem.mul_t(&nu_star);
        let optimal_value = objective.value(&ax);
        Ok(Self {
            seed,
            problem,
            objective,
            x_star,
            nu_star,
            at_nu_star,
            optimal_value,
        })
    }

    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        let (a, b) = generate_synthetic(SyntheticKind::Gaussian, m, n, 1, seed)?;
        Self::new(seed, a, b.column(0).clone_owned())
    }

    /// Positive optimal value; with a Gaussian matrix this implies uniqueness almost surely.
    pub fn has_positive_optimum(&self) -> bool {
        self.optimal_value > 1e-10 * (1.0 + self.objective.rhs().norm_squared())
    }
}

/// First seed at or after `start` whose instance has a positive optimal value.
pub fn find_unique_gaussian(
    m: usize,
    n: usize,
    start: u64,
    max_tries: usize,
) -> Result<(OracleInstance, usize)> {
    for tries in 0..max_tries {
        let inst = OracleInstance::gaussian(m, n, start + tries as u64)?;
        if inst.has_positive_optimum() {
            return Ok((inst, tries + 1));
        }
    }
    Err(crate::error::Error::NoConvergence {
        iterations: max_tries,
    })
}

/// Seeded Gaussian experiment with oracle comparisons at every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRepro {
    pub seed: u64,
    pub tries: usize,
    pub shape: (usize, usize),
    pub optimal_value: f64,
    pub support_size: usize,
    pub strict_zero_count: usize,
    pub weak_count: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// `||x^k - x*||` per checkpoint.
    pub primal_distance: Vec<f64>,
    /// `||nu_hat^k - nu*||` per checkpoint.
    pub dual_distance: Vec<f64>,
    /// Sphere-test eliminations with the projected dual point, where computed.
    pub projection_eliminated: Vec<(usize, usize)>,
    pub safe_certified_at: Option<usize>,
    pub positive_optimum_at: Option<usize>,
    pub final_eliminated: usize,
    pub final_objective_gap: f64,
    /// Eliminated indices where the oracle solution is nonzero (must be empty).
    pub unsafe_eliminations: Vec<usize>,
}

pub struct SyntheticOptions {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub max_tries: usize,
    pub iterations: usize,
    pub strategy: StrictStrategy,
    /// Also screen with the orthogonal projection every this many iterations.
    pub projection_every: Option<usize>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            m: 50,
            n: 100,
            seed: 0,
            max_tries: 200,
            iterations: 7500,
            strategy: StrictStrategy::Lp,
            projection_every: None,
        }
    }
}

pub fn repro_synthetic(opts: &SyntheticOptions) -> Result<SyntheticRepro> {
    let (inst, tries) = find_unique_gaussian(opts.m, opts.n, opts.seed, opts.max_tries)?;
    repro_synthetic_on(&inst, tries, opts)
}

pub fn repro_synthetic_on(
    inst: &OracleInstance,
    tries: usize,
    opts: &SyntheticOptions,
) -> Result<SyntheticRepro> {
    let problem = &inst.problem;
    let obj = &inst.objective;
    let cfg = RunConfig {
        solver: SolverKind::Pgd,
        max_iters: opts.iterations,
        screen_every: 1,
        nu_strict_strategy: opts.strategy,
        stop_on_certify: false,
        keep_history: false,
        ..Default::default()
    };
    let anchors = AnchorCache::new();
    let mut session = ScreeningSession::new(problem, obj, &cfg, &anchors)?;
    let mut primal_distance = Vec::new();
    let mut dual_distance = Vec::new();
    let mut projection_eliminated = Vec::new();
    let mut unsafe_eliminations = Vec::new();
    let mut failure = None;
    let support_tol = 1e-8;
    let mut hook = |v: &IterateView<'_>| {
        let step = (|| -> Result<()> {
            session.observe_iterate(v.iteration, v.x, v.ax)?;
            primal_distance.push((v.x - &inst.x_star).norm());
            let pair = session.last_pair.as_ref().expect("pair recorded");
            dual_distance.push((&pair.nu - &inst.nu_star).norm());
            for (i, &e) in session.eliminated().iter().enumerate() {
                if e && inst.x_star[i] > support_tol && !unsafe_eliminations.contains(&i) {
                    unsafe_eliminations.push(i);
                }
            }
            if let Some(s) = opts.projection_every {
                if v.iteration.is_multiple_of(s) {
                    let nu_prime = obj.gradient(v.ax);
                    let proj = orthogonal_project_dual(
                        problem.matrix(),
                        &nu_prime,
                        &NnlsOptions::default(),
                    )?;
                    let pp = PrimalDualPair::with_tolerances(
                        problem,
                        obj,
                        v.x,
                        &proj,
                        &Default::default(),
                    )?;
                    let r = screening_radius(obj.lipschitz(), pp.gap);
                    let count = sphere_screen_parts(&pp.at_nu, problem.column_norms(), r, 0.0)
                        .eliminated_count();
                    projection_eliminated.push((v.iteration, count));
                }
            }
            Ok(())
        })();
        match step {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    };
    let t = default_step_size(problem, obj)?;
    let trace = pgd_solve(
        problem,
        obj,
        &DVector::zeros(problem.ncols()),
        t,
        opts.iterations,
        &TraceOptions::default(),
        &mut hook,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let comp = strict_complementarity_report(&inst.x_star, &inst.nu_star, &inst.at_nu_star, 1e-9)?;
    Ok(SyntheticRepro {
        seed: inst.seed,
        tries,
        shape: (problem.nrows(), problem.ncols()),
        optimal_value: inst.optimal_value,
        support_size: comp.support.len(),
        strict_zero_count: comp.strict_zeros.len(),
        weak_count: comp.weak.len(),
        final_eliminated: session.eliminated().iter().filter(|&&e| e).count(),
        safe_certified_at: session.safe_certified_at(),
        positive_optimum_at: session.positive_optimum_at(),
        checkpoints: std::mem::take(&mut session.checkpoints),
        primal_distance,
        dual_distance,
        projection_eliminated,
        final_objective_gap: obj.value(&trace.final_ax) - inst.optimal_value,
        unsafe_eliminations,
    })
}

/// Convenience: run the screening loop on the worked example with `config`.
pub fn small_run(config: &RunConfig) -> Result<ScreeningRun> {
    let (a, b) = small_example();
    let problem = Problem::new(a)?;
    let obj = make_nnls_objective(b)?;
    run_screening_loop(&problem, &obj, &DVector::zeros(5), config)
}
