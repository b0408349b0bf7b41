//! Solver results against independently derived closed forms, plus frozen
//! regression values of the one-dimensional comparison.

use frt_reach::analysis::{fixed_point_check, superlevel, Verdict};
use frt_reach::cli_io::runners::{
    di_expected, di_grid, frt_1d_exact, run_1d_comparison, RunOptions, DI_P1, DI_P2, DI_SA_RADIUS,
};
use frt_reach::dynamics::ControlAffineSystem;
use frt_reach::grid::{Axis, Grid, ScalarField};
use frt_reach::solver::{levelset_solve_frt, value_iterate, Formulation, SolveParams};
use frt_reach::targets::{build_target, DiSetKind, Shape, TargetSpec};

/// Forward tube value of `x' = x + u`, `|u| <= 1`, target `2 - x`, by
/// brute force: along `u = -1` the backward flow is `1 + (x - 1) e^{-t}`, so
/// `V(x) = max over s >= 0 of e^{-2s} (1 - (x - 1) e^{-s})`, here maximized
/// over a fine grid in `s`.
fn brute_force_1d(x: f64) -> f64 {
    (0..=200_000)
        .map(|k| k as f64 * 1e-4)
        .map(|s| (-2.0 * s).exp() * (1.0 - (x - 1.0) * (-s).exp()))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(2.0 - x)
}

#[test]
fn closed_form_agrees_with_brute_force() {
    for k in 0..=60 {
        let x = k as f64 * 0.1;
        assert!((frt_1d_exact(x) - brute_force_1d(x)).abs() < 1e-6, "x = {x}");
    }
}

#[test]
fn coarse_1d_forward_tube_matches_closed_form() {
    let grid = Grid::shared(vec![Axis::new(0.0, 6.0, 301)]).unwrap();
    let dx = grid.spacing(0);
    let sys = ControlAffineSystem::by_name("integrator1d").unwrap();
    let target = build_target(&TargetSpec::ramp_1d(), &grid).unwrap();
    let params = SolveParams { dt_vi: Some(0.008), tol_steady: Some(1e-6), ..SolveParams::with_gamma(2.0) };
    let vi = value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params).unwrap();
    let ls = levelset_solve_frt(&sys, &target, &params).unwrap();
    for (name, v) in [("value iteration", &vi.value), ("level set", &ls.value)] {
        let err = (0..grid.len()).map(|k| (v.get(k) - frt_1d_exact(grid.coord(0, k))).abs()).fold(0.0, f64::max);
        assert!(err <= 3.0 * dx, "{name}: {err}");
    }
}

#[test]
fn inverse_optimality_reproduces_clamped_barrier() {
    let grid = Grid::shared(vec![Axis::new(-2.0, 2.0, 201)]).unwrap();
    let sys = ControlAffineSystem::by_name("single_integrator1d").unwrap();
    let h = ScalarField::from_fn(grid.clone(), |x| 1.0 - x[0] * x[0]);
    let params = SolveParams { tol_steady: Some(1e-8), ..SolveParams::with_gamma(4.0) };
    let v = levelset_solve_frt(&sys, &h, &params).unwrap().value;
    for k in 0..grid.len() {
        assert!((v.get(k) - h.get(k).max(0.0)).abs() < 1e-6);
    }
}

#[test]
fn double_integrator_verdicts_on_a_coarse_grid() {
    let grid = di_grid([161, 121]);
    let sys = ControlAffineSystem::by_name("double_integrator").unwrap();
    let params = SolveParams { dt_vi: Some(0.05), ..SolveParams::with_gamma(2.0) };
    for kind in DiSetKind::ALL {
        let shape = Shape::DiSet { kind, p1: DI_P1, p2: DI_P2, r: DI_SA_RADIUS };
        let target = build_target(&TargetSpec::shape(shape, -1.0, 1.0), &grid).unwrap();
        let v = value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params).unwrap().value;
        let check = fixed_point_check(&superlevel(&target, 0.0).unwrap(), &v, 0.0).unwrap();
        assert_eq!(check.verdict, di_expected(kind), "{}: {:?}", kind.name(), check.metrics);
        if check.verdict == Verdict::FixedPoint {
            assert!(check.metrics.jaccard >= 0.97);
        }
    }
}

#[test]
fn one_d_comparison_regression() {
    let (s, _) = run_1d_comparison(&RunOptions::default()).unwrap();
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    assert!(close(s.frt_error, 0.0017316, 1e-5), "{}", s.frt_error);
    assert_eq!(s.kernel, (0.0, 1.34));
    assert!(close(s.nodiscount_jump, 3.0, 1e-4), "{}", s.nodiscount_jump);
    assert_eq!(s.cbvf_cap, 20.0);
    assert_eq!(s.cbvf_cap_fraction, 0.0);
    assert!(close(s.gamma_jaccard, 0.673846, 1e-5), "{}", s.gamma_jaccard);
    assert!(close(s.levelset_gap, 0.0152453, 1e-5), "{}", s.levelset_gap);
    assert!(s.init_gap < 1e-5, "{}", s.init_gap);
}
