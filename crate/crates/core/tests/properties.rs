mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use safe_nnls::certify::{certify_unique, coherence, glp_check, reduce_problem, DEFAULT_GLP_TOL};
use safe_nnls::driver::{run_screening_loop, RunConfig};
use safe_nnls::dual::{
    dual_line_search, line_search_coefficient, orthogonal_project_dual, strict_feasible_lp,
    StrictLpOptions,
};
use safe_nnls::problem::{
    make_nnls_objective, FeasibilityTolerances, PrimalDualPair, Problem, SmoothObjective,
};
use safe_nnls::screening::{dome_screen_parts, screening_radius, sphere_screen_parts};
use safe_nnls::solvers::{
    active_set_nnls, default_step_size, pgd_solve, pgd_step, NnlsOptions, TraceOptions,
};
use safe_nnls::synth::NormalStream;
use std::ops::ControlFlow;

fn instance(seed: u64, m: usize, n: usize) -> (DMatrix<f64>, DVector<f64>, NormalStream) {
    let mut rng = NormalStream::new(seed);
    let a = gaussian_matrix(&mut rng, m, n);
    let b = gaussian_vector(&mut rng, m);
    (a, b, rng)
}

fn nonnegative(rng: &mut NormalStream, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z = rng.normal();
        if z < 0.0 {
            0.0
        } else {
            z
        }
    })
}

/// A dual feasible point built from a random candidate and an LP anchor.
fn feasible_dual(
    a: &DMatrix<f64>,
    nu_prime: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let anchor = strict_feasible_lp(a, &StrictLpOptions::default()).ok()?;
    let ls = dual_line_search(
        &(a.transpose() * nu_prime),
        &anchor.at_nu,
        nu_prime,
        &anchor.nu,
    )
    .ok()?;
    Some((ls.nu, ls.at_nu, ls.t_star))
}

fn no_op(_: &safe_nnls::solvers::IterateView<'_>) -> ControlFlow<()> {
    ControlFlow::Continue(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = NormalStream::new(seed);
        let obj = make_nnls_objective(gaussian_vector(&mut rng, m)).unwrap();
        let z = gaussian_vector(&mut rng, m);
        let d = gaussian_vector(&mut rng, m);
        let h = 1e-5;
        let fd = (obj.value(&(&z + &d * h)) - obj.value(&(&z - &d * h))) / (2.0 * h);
        prop_assert!((obj.gradient(&z).dot(&d) - fd).abs() <= 1e-5 * (1.0 + obj.value(&z).abs()));
    }

    #[test]
    fn fenchel_young_holds_with_equality_at_gradient(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = NormalStream::new(seed);
        let obj = make_nnls_objective(gaussian_vector(&mut rng, m)).unwrap();
        let z = gaussian_vector(&mut rng, m);
        let nu = gaussian_vector(&mut rng, m);
        prop_assert!(obj.value(&z) + obj.conjugate(&nu) >= nu.dot(&z) - 1e-12 * (1.0 + nu.dot(&z).abs()));
        let g = obj.gradient(&z);
        let lhs = obj.value(&z) + obj.conjugate(&g);
        prop_assert!((lhs - g.dot(&z)).abs() <= 1e-8 * (1.0 + lhs.abs()));
        prop_assert!(obj.fenchel_young_gap(&z, &nu) >= 0.0);
    }

    #[test]
    fn dual_objective_is_strongly_concave(seed in any::<u64>(), m in 1usize..8, theta in 0.0f64..1.0) {
        let mut rng = NormalStream::new(seed);
        let obj = make_nnls_objective(gaussian_vector(&mut rng, m)).unwrap();
        let u = gaussian_vector(&mut rng, m);
        let v = gaussian_vector(&mut rng, m);
        let mid = obj.dual_value(&(&u * theta + &v * (1.0 - theta)));
        let chord = theta * obj.dual_value(&u) + (1.0 - theta) * obj.dual_value(&v);
        let curvature = theta * (1.0 - theta) / (2.0 * obj.lipschitz()) * (&u - &v).norm_squared();
        prop_assert!(mid >= chord + curvature - 1e-10 * (1.0 + mid.abs() + chord.abs()));
    }

    #[test]
    fn gap_of_a_feasible_pair_is_nonnegative(seed in any::<u64>(), m in 2usize..7, n in 2usize..9) {
        let (a, b, mut rng) = instance(seed, m, n);
        let x = nonnegative(&mut rng, n);
        let Some((nu, _, _)) = feasible_dual(&a, &gaussian_vector(&mut rng, m)) else {
            return Ok(());
        };
        let problem = Problem::new(a.clone()).unwrap();
        let obj = make_nnls_objective(b.clone()).unwrap();
        let pair = PrimalDualPair::new(&problem, &obj, &x, &nu).unwrap();
        prop_assert!(pair.gap >= 0.0);
        // direct evaluation of f(Ax) - g(nu)
        let direct = 0.5 * (&a * &x - &b).norm_squared() + 0.5 * (&nu + &b).norm_squared() - 0.5 * b.norm_squared();
        prop_assert!((pair.gap - direct.max(0.0)).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn pgd_descends_and_stays_feasible(seed in any::<u64>(), m in 2usize..10, n in 2usize..12) {
        let (a, b, _) = instance(seed, m, n);
        let problem = Problem::new(a).unwrap();
        let obj = make_nnls_objective(b).unwrap();
        let t = default_step_size(&problem, &obj).unwrap();
        let trace = pgd_solve(
            &problem, &obj, &DVector::zeros(n), t, 60, &TraceOptions { record_every: 1 }, &mut no_op,
        ).unwrap();
        for w in trace.objective_values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        }
        for (_, x) in &trace.iterates {
            prop_assert!(x.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn oracle_solution_is_a_pgd_fixed_point(seed in any::<u64>(), m in 2usize..8, n in 2usize..10) {
        let (a, b, _) = instance(seed, m, n);
        let (x_star, _) = active_set_nnls(&a, &b, &NnlsOptions::default()).unwrap();
        let problem = Problem::new(a).unwrap();
        let obj = make_nnls_objective(b).unwrap();
        let t = default_step_size(&problem, &obj).unwrap();
        let next = pgd_step(&problem, &obj, &x_star, t).unwrap();
        prop_assert!((&next - &x_star).amax() <= 1e-9 * (1.0 + x_star.amax()));
    }

    #[test]
    fn line_search_coefficient_is_in_unit_interval(l in -1e3f64..1e3, l0 in 1e-6f64..1e3) {
        let t = line_search_coefficient(l, l0).unwrap();
        prop_assert!((0.0..1.0).contains(&t));
        prop_assert_eq!(t == 0.0, l >= 0.0);
        prop_assert!(line_search_coefficient(l, -l0).is_err());
    }

    #[test]
    fn line_search_lands_on_the_feasible_boundary(seed in any::<u64>(), m in 2usize..7, n in 2usize..10) {
        let (a, _, mut rng) = instance(seed, m, n);
        let nu_prime = gaussian_vector(&mut rng, m);
        let Some((nu, at_nu, t)) = feasible_dual(&a, &nu_prime) else {
            return Ok(());
        };
        prop_assert!((0.0..=1.0).contains(&t));
        let at_prime = a.transpose() * &nu_prime;
        prop_assert_eq!(t == 0.0, at_prime.min() >= 0.0);
        let scale = a.abs().column_sum().max() * nu.amax();
        prop_assert!((a.transpose() * &nu).min() >= -1e-10 * scale);
        prop_assert!((&at_nu - a.transpose() * &nu).amax() <= 1e-10 * (1.0 + scale));
        if t > 0.0 {
            prop_assert!(at_nu.min().abs() <= 1e-10 * (1.0 + scale));
        }
    }

    #[test]
    fn line_search_is_lipschitz_in_the_candidate(seed in any::<u64>(), m in 2usize..6, n in 3usize..9) {
        let (a, _, mut rng) = instance(seed, m, n);
        let Ok(anchor) = strict_feasible_lp(&a, &StrictLpOptions::default()) else {
            return Ok(());
        };
        let nu_prime = gaussian_vector(&mut rng, m);
        let d = gaussian_vector(&mut rng, m).normalize();
        let map = |v: &DVector<f64>| {
            dual_line_search(&(a.transpose() * v), &anchor.at_nu, v, &anchor.nu).unwrap().nu
        };
        let base = map(&nu_prime);
        let ratios: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&delta| (map(&(&nu_prime + &d * delta)) - &base).norm() / delta)
            .collect();
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(hi.is_finite());
        // piecewise smooth: a binding-index switch inside a step changes the slope
        prop_assert!(hi <= 1e-6 || hi <= 10.0 * lo, "{ratios:?}");
    }

    #[test]
    fn projection_is_no_farther_than_line_search(seed in any::<u64>(), m in 2usize..6, n in 2usize..9) {
        let (a, _, mut rng) = instance(seed, m, n);
        let nu_prime = gaussian_vector(&mut rng, m);
        let Some((nu_ls, _, _)) = feasible_dual(&a, &nu_prime) else {
            return Ok(());
        };
        let proj = orthogonal_project_dual(&a, &nu_prime, &NnlsOptions::default()).unwrap();
        prop_assert!((&proj - &nu_prime).norm() <= (&nu_ls - &nu_prime).norm() + 1e-10);
        let scale = a.abs().column_sum().max() * nu_prime.amax();
        prop_assert!((a.transpose() * &proj).min() >= -1e-10 * scale);
        // projection KKT: the residual is orthogonal to the projected point
        prop_assert!((&proj - &nu_prime).dot(&proj).abs() <= 1e-8 * (1.0 + nu_prime.norm_squared()));
    }

    #[test]
    fn dome_dominates_sphere_and_both_tighten_as_radius_shrinks(
        seed in any::<u64>(), m in 2usize..7, n in 2usize..10, r in 0.0f64..3.0, shrink in 0.0f64..1.0,
    ) {
        let (a, _, mut rng) = instance(seed, m, n);
        let Some((_, at_nu, _)) = feasible_dual(&a, &gaussian_vector(&mut rng, m)) else {
            return Ok(());
        };
        let norms = DVector::from_iterator(n, a.column_iter().map(|c| c.norm()));
        let gram = a.transpose() * &a;
        let sphere = sphere_screen_parts(&at_nu, &norms, r, 0.0);
        let dome = dome_screen_parts(&gram, &at_nu, r, 0.0);
        for i in 0..n {
            prop_assert!(dome.lower_bounds[i] >= sphere.lower_bounds[i] - 1e-12);
            prop_assert_eq!(sphere.eliminated[i], sphere.lower_bounds[i] > 0.0);
        }
        let r2 = r * shrink;
        let sphere2 = sphere_screen_parts(&at_nu, &norms, r2, 0.0);
        let dome2 = dome_screen_parts(&gram, &at_nu, r2, 0.0);
        for i in 0..n {
            prop_assert!(!sphere.eliminated[i] || sphere2.eliminated[i]);
            prop_assert!(!dome.eliminated[i] || dome2.eliminated[i]);
            prop_assert!(dome2.lower_bounds[i] >= dome.lower_bounds[i] - 1e-12);
        }
    }

    #[test]
    fn glp_implies_full_rank(seed in any::<u64>(), m in 1usize..5, n in 1usize..8, dup in any::<bool>()) {
        let mut rng = NormalStream::new(seed);
        let mut a = gaussian_matrix(&mut rng, m, n);
        if dup && n >= 2 {
            let c = a.column(0) * 2.0;
            a.set_column(n - 1, &c);
        }
        if glp_check(&a, DEFAULT_GLP_TOL).unwrap() {
            let rank = singular_values_via_gram(&a).iter().filter(|&&s| s > 1e-8).count();
            prop_assert_eq!(rank, m.min(n));
        }
    }

    #[test]
    fn coherence_is_the_largest_column_cosine(seed in any::<u64>(), m in 1usize..8, n in 2usize..12) {
        let mut rng = NormalStream::new(seed);
        let a = gaussian_matrix(&mut rng, m, n);
        let rep = coherence(&Problem::new(a.clone()).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.mu));
        prop_assert!((rep.mu - coherence_double_loop(&a).min(1.0)).abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn positive_optimum_with_glp_has_fewer_than_m_nonzeros(seed in any::<u64>(), m in 2usize..6, extra in 1usize..5) {
        let n = m + extra;
        let (a, b, _) = instance(seed, m, n);
        prop_assume!(glp_check(&a, DEFAULT_GLP_TOL).unwrap());
        let (x_star, v) = brute_force_nnls(&a, &b);
        if v > 1e-8 {
            prop_assert!(x_star.iter().filter(|&&x| x > 1e-10).count() < m);
        }
    }

    #[test]
    fn certified_reduction_preserves_the_solution(seed in any::<u64>(), m in 3usize..7, extra in 1usize..5) {
        let n = m + extra;
        let (a, b, _) = instance(seed, m, n);
        let (x_star, _) = brute_force_nnls(&a, &b);
        let problem = Problem::new(a.clone()).unwrap();
        let obj = make_nnls_objective(b.clone()).unwrap();
        let cfg = RunConfig { max_iters: 3000, screen_every: 10, ..Default::default() };
        let run = match run_screening_loop(&problem, &obj, &DVector::zeros(n), &cfg) {
            Err(safe_nnls::error::Error::NoStrictPoint { .. }) => return Ok(()),
            other => other.unwrap(),
        };
        for (i, &e) in run.eliminated.iter().enumerate() {
            prop_assert!(!e || x_star[i] <= 1e-8, "column {} eliminated with x* = {}", i, x_star[i]);
        }
        if run.eliminated.iter().all(|&e| e) {
            prop_assert!(x_star.amax() <= 1e-8);
        } else if run.report.unique && run.report.method == safe_nnls::certify::CertificationMethod::SafeReduction {
            let red = reduce_problem(&problem, &run.eliminated).unwrap();
            let (x_red, _) = active_set_nnls(&red.a_red, &b, &NnlsOptions::default()).unwrap();
            let padded = red.expand(&x_red).unwrap();
            prop_assert!((&padded - &x_star).amax() <= 1e-8 * (1.0 + x_star.amax()));
            let sigma = certify_unique(&problem, &run.eliminated, 1e-10).unwrap().sigma_min;
            prop_assert_eq!(sigma, run.report.sigma_min);
            let bound = run.report.distance_bound.unwrap();
            prop_assert!((&run.trace.final_x - &x_star).norm() <= bound + 1e-9, "{} > {}", (&run.trace.final_x - &x_star).norm(), bound);
        }
    }

    #[test]
    fn sphere_bounds_never_exceed_the_optimal_dual_slack(seed in any::<u64>(), m in 2usize..8, n in 2usize..12, iters in 0usize..200) {
        let (a, b, _) = instance(seed, m, n);
        let (x_star, _) = active_set_nnls(&a, &b, &NnlsOptions::default()).unwrap();
        let nu_star = &a * &x_star - &b;
        let at_star = a.transpose() * &nu_star;
        let problem = Problem::new(a).unwrap();
        let obj = make_nnls_objective(b).unwrap();
        let t = default_step_size(&problem, &obj).unwrap();
        let trace = pgd_solve(&problem, &obj, &DVector::zeros(n), t, iters, &TraceOptions::default(), &mut no_op).unwrap();
        let nu_prime = obj.gradient(&trace.final_ax);
        let Some((nu, _, _)) = feasible_dual(problem.matrix(), &nu_prime) else {
            return Ok(());
        };
        let pair = PrimalDualPair::with_tolerances(&problem, &obj, &trace.final_x, &nu, &FeasibilityTolerances::default()).unwrap();
        // the computed gap carries an absolute rounding error of order u |A| |nu| |x|
        let floor = 1e-14 * (1.0 + problem.column_norms().max() * pair.nu.norm() * (1.0 + pair.x.norm()));
        let r = screening_radius(1.0, pair.gap + floor);
        prop_assert!((&pair.nu - &nu_star).norm() <= r * (1.0 + 1e-9) + 1e-12);
        let sphere = sphere_screen_parts(&pair.at_nu, problem.column_norms(), r, 0.0);
        for i in 0..n {
            prop_assert!(sphere.lower_bounds[i] <= at_star[i] + 1e-8 * (1.0 + at_star[i].abs()));
        }
    }
}
