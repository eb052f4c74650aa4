use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use safe_nnls::driver::{
    batch_certify, run_screening_loop, AnchorCache, RunConfig, ScreeningSession, SolverKind,
    StrictStrategy,
};
use safe_nnls::io;
use safe_nnls::problem::{make_nnls_objective, Problem};
use safe_nnls::report::{self, Report, ReportFormat, RunReport};
use safe_nnls::repro::{self, SyntheticOptions};
use safe_nnls::screening::ScreenMethod;
use safe_nnls::solvers::{
    accelerated_solve, active_set_nnls, default_step_size, pgd_solve, AcceleratedOptions,
    NnlsOptions, TraceOptions,
};
use safe_nnls::synth::{generate_synthetic_with, SyntheticKind, SyntheticOptions as GenOptions};

const EXIT_INCONCLUSIVE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "safe-nnls",
    version,
    about = "Safe screening and uniqueness certificates for NNLS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one NNLS problem and write the solution.
    Solve(SolveArgs),
    /// Screen at a given (or computed) primal point.
    Screen(ScreenArgs),
    /// Run the screening loop and certify uniqueness.
    Certify(RunArgs),
    /// Certify every column of a right-hand-side matrix against one A.
    Batch(RunArgs),
    /// Reproduce the 3x5 worked example.
    ReproSmall(ReproSmallArgs),
    /// Reproduce the seeded Gaussian experiment.
    ReproSynthetic(ReproSyntheticArgs),
    /// Write a seeded synthetic matrix and right-hand sides.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Pgd,
    Accel,
    ActiveSet,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sphere,
    Dome,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Clip,
    Ones,
    Lp,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Gaussian,
    Kernel,
}

#[derive(Args)]
struct InputArgs {
    /// Matrix A (CSV, or MatrixMarket array for .mtx/.mm).
    #[arg(long)]
    matrix: PathBuf,
    /// Right-hand side(s), one per column (a single row is read as one vector).
    #[arg(long)]
    rhs: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "pgd")]
    solver: SolverArg,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long)]
    step_size: Option<f64>,
    /// Where to write x (CSV column); stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct LoopArgs {
    #[arg(long, value_enum, default_value = "pgd")]
    solver: SolverArg,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Screening stride (default 1; 50 for batch).
    #[arg(long)]
    screen_every: Option<usize>,
    #[arg(long, value_enum, default_value = "sphere")]
    screen_method: MethodArg,
    #[arg(long, value_enum, default_value = "auto")]
    nu_strict_strategy: StrategyArg,
    /// Fixed strictly feasible anchor (vector file), overriding the strategy.
    #[arg(long)]
    nu_strict: Option<PathBuf>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
    /// Eliminate only when the lower bound exceeds this margin.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// Keep iterating after certification.
    #[arg(long)]
    no_stop: bool,
    /// Treat A as being in general linear position.
    #[arg(long)]
    glp_known: bool,
    /// Finish uncertified batch problems with the active-set solver.
    #[arg(long)]
    finish_active_set: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    run: LoopArgs,
    /// Report path; JSON unless --format csv or a .csv extension.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Primal point to screen at; otherwise the solver runs --max-iters steps.
    #[arg(long)]
    x_hat: Option<PathBuf>,
    #[command(flatten)]
    run: LoopArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReproSmallArgs {
    #[arg(long, default_value_t = 250)]
    iterations: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReproSyntheticArgs {
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// First seed tried; later seeds are drawn until the optimum is positive.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 7500)]
    iterations: usize,
    #[arg(long, value_enum, default_value = "lp")]
    nu_strict_strategy: StrategyArg,
    /// Also screen with the orthogonal projection at this stride.
    #[arg(long)]
    projection_every: Option<usize>,
    /// JSON document, or the per-iteration curves with a .csv extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: KindArg,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.07)]
    kernel_width: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long)]
    matrix_out: PathBuf,
    #[arg(long)]
    rhs_out: PathBuf,
}

impl LoopArgs {
    fn config(&self, default_stride: usize) -> anyhow::Result<RunConfig> {
        let solver = match self.solver {
            SolverArg::Pgd => SolverKind::Pgd,
            SolverArg::Accel => SolverKind::Accel,
            SolverArg::ActiveSet => {
                bail!("the active-set solver has no iterates to screen; use pgd or accel")
            }
        };
        let nu_strict = match &self.nu_strict {
            Some(p) => Some(io::read_vector(p)?.as_slice().to_vec()),
            None => None,
        };
        let cfg = RunConfig {
            solver,
            max_iters: self.max_iters,
            screen_every: self.screen_every.unwrap_or(default_stride),
            screen_method: match self.screen_method {
                MethodArg::Sphere => ScreenMethod::Sphere,
                MethodArg::Dome => ScreenMethod::Dome,
            },
            nu_strict_strategy: strategy(self.nu_strict_strategy),
            nu_strict,
            stop_on_certify: !self.no_stop,
            rank_tol: self.rank_tol,
            margin: self.margin,
            step_size: self.step_size,
            glp_known: self.glp_known,
            keep_history: false,
            finish_with_active_set: self.finish_active_set,
            seed: self.seed,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strategy(s: StrategyArg) -> StrictStrategy {
    match s {
        StrategyArg::Clip => StrictStrategy::Clip,
        StrategyArg::Ones => StrictStrategy::Ones,
        StrategyArg::Lp => StrictStrategy::Lp,
        StrategyArg::Auto => StrictStrategy::Auto,
    }
}

fn load(input: &InputArgs) -> anyhow::Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = io::read_matrix(&input.matrix)
        .with_context(|| format!("reading {}", input.matrix.display()))?;
    let b = io::read_rhs(&input.rhs).with_context(|| format!("reading {}", input.rhs.display()))?;
    if b.nrows() != a.nrows() {
        bail!(
            "A has {} rows but the right-hand side has {}",
            a.nrows(),
            b.nrows()
        );
    }
    Ok((a, b))
}

fn single_rhs(b: &DMatrix<f64>) -> anyhow::Result<DVector<f64>> {
    if b.ncols() != 1 {
        bail!(
            "expected a single right-hand side, found {}; use `batch`",
            b.ncols()
        );
    }
    Ok(b.column(0).clone_owned())
}

fn emit<R: Report>(
    report: &R,
    path: Option<&Path>,
    format: Option<FormatArg>,
) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let fmt = match format {
                Some(FormatArg::Json) => ReportFormat::Json,
                Some(FormatArg::Csv) => ReportFormat::Csv,
                None => ReportFormat::from_path(p),
            };
            report::write_report(report, p, fmt).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            println!("{}", report::to_json(report)?);
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve(args: &SolveArgs) -> anyhow::Result<u8> {
    let (a, b) = load(&args.input)?;
    let b = single_rhs(&b)?;
    let x = match args.solver {
        SolverArg::ActiveSet => active_set_nnls(&a, &b, &NnlsOptions::default())?.0,
        solver => {
            let problem = Problem::new(a)?;
            let obj = make_nnls_objective(b)?;
            let x0 = DVector::zeros(problem.ncols());
            let mut keep =
                |_: &safe_nnls::solvers::IterateView<'_>| std::ops::ControlFlow::Continue(());
            let trace = if matches!(solver, SolverArg::Pgd) {
                let t = match args.step_size {
                    Some(t) => t,
                    None => default_step_size(&problem, &obj)?,
                };
                pgd_solve(
                    &problem,
                    &obj,
                    &x0,
                    t,
                    args.max_iters,
                    &TraceOptions::default(),
                    &mut keep,
                )?
            } else {
                let opts = AcceleratedOptions {
                    initial_lipschitz: args.step_size.map(|t| 1.0 / t),
                    ..Default::default()
                };
                accelerated_solve(
                    &problem,
                    &obj,
                    &x0,
                    args.max_iters,
                    &opts,
                    &TraceOptions::default(),
                    &mut keep,
                )?
            };
            trace.final_x
        }
    };
    let col = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    match &args.output {
        Some(p) => io::write_matrix(p, &col)?,
        None => io::write_csv_matrix(std::io::stdout().lock(), &col)?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct ScreenOutput {
    iteration: usize,
    gap: f64,
    radius: f64,
    method: ScreenMethod,
    lower_bounds: Vec<f64>,
    eliminated: Vec<usize>,
}

fn screen(args: &ScreenArgs) -> anyhow::Result<u8> {
    let (a, b) = load(&args.input)?;
    let problem = Problem::new(a)?;
    let obj = make_nnls_objective(single_rhs(&b)?)?;
    let mut cfg = args.run.config(1)?;
    cfg.keep_history = true;
    cfg.stop_on_certify = false;
    let (k, x) = match &args.x_hat {
        Some(p) => (0, io::read_vector(p)?),
        None => {
            cfg.screen_every = cfg.max_iters.max(1);
            let run = run_screening_loop(&problem, &obj, &DVector::zeros(problem.ncols()), &cfg)?;
            (run.trace.iterations_run, run.trace.final_x)
        }
    };
    let anchors = AnchorCache::new();
    let mut session = ScreeningSession::new(&problem, &obj, &cfg, &anchors)?;
    let x = safe_nnls::problem::clamp_primal(&x, &cfg.tolerances)?;
    let ax = problem.mul(&x);
    session.observe_iterate(k, &x, &ax)?;
    let screens = session.screens.pop().expect("one checkpoint");
    let res = screens.dome.unwrap_or(screens.sphere);
    let out = ScreenOutput {
        iteration: k,
        gap: session.last_pair.as_ref().map_or(f64::NAN, |p| p.gap),
        radius: res.radius,
        method: res.method,
        eliminated: res.eliminated_indices(),
        lower_bounds: res.lower_bounds,
    };
    emit_json(&out, args.report.as_deref())?;
    Ok(0)
}

fn certify(args: &RunArgs) -> anyhow::Result<u8> {
    let (a, b) = load(&args.input)?;
    let problem = Problem::new(a)?;
    let obj = make_nnls_objective(single_rhs(&b)?)?;
    let cfg = args.run.config(1)?;
    let run = run_screening_loop(&problem, &obj, &DVector::zeros(problem.ncols()), &cfg)?;
    let rep = RunReport::from_run(&run, &cfg, (problem.nrows(), problem.ncols()));
    emit(&rep, args.report.as_deref(), args.format)?;
    eprintln!(
        "{}: method {:?}, {} of {} columns eliminated, gap {:.3e}",
        if run.report.unique {
            "unique"
        } else {
            "inconclusive"
        },
        run.report.method,
        run.report.r,
        problem.ncols(),
        run.report.gap
    );
    Ok(if run.report.unique {
        0
    } else {
        EXIT_INCONCLUSIVE
    })
}

fn batch(args: &RunArgs) -> anyhow::Result<u8> {
    let (a, b) = load(&args.input)?;
    let problem = Problem::new(a)?;
    let cfg = args.run.config(50)?;
    let rep = batch_certify(&problem, &b, &cfg)?;
    emit(&rep, args.report.as_deref(), args.format)?;
    eprintln!(
        "{} of {} certified unique, {} failed, mean eliminated fraction {:.3}",
        rep.certified_count,
        rep.problems.len(),
        rep.failed_count,
        rep.eliminated_fraction
    );
    for p in rep.problems.iter().filter(|p| p.error.is_some()) {
        eprintln!(
            "problem {}: {}",
            p.index,
            p.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if rep.failed_count > 0 {
        1
    } else if rep.certified_count < rep.problems.len() {
        EXIT_INCONCLUSIVE
    } else {
        0
    })
}

fn repro_small(args: &ReproSmallArgs) -> anyhow::Result<u8> {
    let rep = repro::repro_small(args.iterations)?;
    emit_json(&rep, args.report.as_deref())?;
    let c = &rep.computed;
    eprintln!(
        "x_hat {:.4?}  gap {:.4}  eliminated {:?}  unique {}  SAFE at {:?}  p*>0 at {:?}",
        c.x_hat,
        c.gap,
        c.eliminated.iter().map(|i| i + 1).collect::<Vec<_>>(),
        c.certification.unique,
        rep.safe_milestone,
        rep.positive_milestone
    );
    Ok(if c.certification.unique {
        0
    } else {
        EXIT_INCONCLUSIVE
    })
}

fn repro_synthetic(args: &ReproSyntheticArgs) -> anyhow::Result<u8> {
    let opts = SyntheticOptions {
        m: args.m,
        n: args.n,
        seed: args.seed,
        iterations: args.iterations,
        strategy: strategy(args.nu_strict_strategy),
        projection_every: args.projection_every,
        ..Default::default()
    };
    let rep = repro::repro_synthetic(&opts)?;
    match &args.report {
        Some(p) if ReportFormat::from_path(p) == ReportFormat::Csv => {
            let f = std::fs::File::create(p)?;
            let mut w = csv::Writer::from_writer(f);
            for c in &rep.checkpoints {
                w.serialize(c)?;
            }
            w.flush()?;
        }
        other => emit_json(&rep, other.as_deref())?,
    }
    eprintln!(
        "seed {} ({} draws): SAFE at {:?}, p*>0 at {:?}, eliminated {} of {} strict zeros",
        rep.seed,
        rep.tries,
        rep.safe_certified_at,
        rep.positive_optimum_at,
        rep.final_eliminated,
        rep.strict_zero_count
    );
    Ok(if rep.safe_certified_at.is_some() {
        0
    } else {
        EXIT_INCONCLUSIVE
    })
}

fn generate(args: &GenerateArgs) -> anyhow::Result<u8> {
    let kind = match args.kind {
        KindArg::Gaussian => SyntheticKind::Gaussian,
        KindArg::Kernel => SyntheticKind::Kernel,
    };
    let mut opts = GenOptions::new(kind, args.m, args.n, args.k, args.seed);
    opts.kernel_width = args.kernel_width;
    opts.noise = args.noise;
    let (a, b) = generate_synthetic_with(&opts)?;
    io::write_matrix(&args.matrix_out, &a)?;
    io::write_matrix(&args.rhs_out, &b)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Screen(a) => screen(a),
        Command::Certify(a) => certify(a),
        Command::Batch(a) => batch(a),
        Command::ReproSmall(a) => repro_small(a),
        Command::ReproSynthetic(a) => repro_synthetic(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
