//! WebAssembly bindings for the demo page: the one-dimensional formulation
//! comparison, double-integrator forward tubes and pendulum filter runs.
//!
//! Results cross the boundary as flat `f64` arrays; the plain functions are
//! usable (and tested) natively, the `wasm_*` wrappers only convert errors.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use frt_reach::analysis::{fixed_point_check, superlevel};
use frt_reach::dynamics::ControlAffineSystem;
use frt_reach::grid::{Axis, Grid, ScalarField};
use frt_reach::safety_sim::{simulate, DisturbanceMode, FilterSpec, PendulumSchedule, Policy, SimOptions};
use frt_reach::solver::{value_iterate, Formulation, SolveParams};
use frt_reach::targets::{build_target, BarrierFunction, DiSetKind, Shape, TargetSpec};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn system(name: &str) -> ControlAffineSystem {
    ControlAffineSystem::by_name(name).expect("built-in system")
}

/// Columns of [`compare_1d`] rows.
pub const PROFILE_COLUMNS: usize = 6;

/// Rows `x, target, frt, brt, brt-nodiscount, cbvf` on `[0, 6]` for
/// `x' = x + u` with target `2 - x`.
pub fn compare_1d(gamma: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(11..=2001).contains(&points) {
        return Err(format!("points must be in 11..=2001, got {points}"));
    }
    let grid = Grid::shared(vec![Axis::new(0.0, 6.0, points)]).map_err(err)?;
    let dx = grid.spacing(0);
    let sys = system("integrator1d");
    let target = build_target(&TargetSpec::ramp_1d(), &grid).map_err(err)?;
    // largest step inside the three-cell foot-point limit at speed 7
    let params = SolveParams {
        dt_vi: Some(0.99 * 3.0 * dx / 7.0),
        tol_steady: Some(1e-6),
        max_time: 6.0,
        ..SolveParams::with_gamma(gamma)
    };
    let mut cols = vec![target.clone()];
    for f in Formulation::ALL {
        cols.push(value_iterate(&target, f, &sys, &target, &params).map_err(err)?.value);
    }
    let mut out = Vec::with_capacity(points * PROFILE_COLUMNS);
    for k in 0..points {
        out.push(grid.coord(0, k));
        out.extend(cols.iter().map(|c| c.get(k)));
    }
    Ok(out)
}

/// A double-integrator forward tube.
#[wasm_bindgen]
pub struct DiTube {
    nx: usize,
    ny: usize,
    target: Vec<f64>,
    value: Vec<f64>,
    verdict: String,
    jaccard: f64,
}

#[wasm_bindgen]
impl DiTube {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Target values, row-major with the position axis outermost.
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    pub fn value(&self) -> Vec<f64> {
        self.value.clone()
    }

    pub fn verdict(&self) -> String {
        self.verdict.clone()
    }

    pub fn jaccard(&self) -> f64 {
        self.jaccard
    }
}

fn di_grid(nx: usize, ny: usize) -> Result<Arc<Grid>, String> {
    Grid::shared(vec![Axis::new(-4.0, 4.0, nx), Axis::new(-3.0, 3.0, ny)]).map_err(err)
}

/// Forward tube of one of the sets `Sa`..`Sd` on `[-4, 4] x [-3, 3]`.
pub fn di_tube(set: &str, gamma: f64, nx: usize, ny: usize) -> Result<DiTube, String> {
    let kind = DiSetKind::from_name(set).ok_or_else(|| format!("unknown set `{set}`"))?;
    if !(21..=401).contains(&nx) || !(21..=301).contains(&ny) {
        return Err(format!("grid {nx}x{ny} outside 21..=401 x 21..=301"));
    }
    let grid = di_grid(nx, ny)?;
    let shape = Shape::DiSet { kind, p1: 2.0, p2: 3.0, r: 2.5 };
    let target = build_target(&TargetSpec::shape(shape, -1.0, 1.0), &grid).map_err(err)?;
    let sys = system("double_integrator");
    let dt = 0.99 * (3.0 * grid.spacing(0) / 3.0).min(3.0 * grid.spacing(1));
    let params = SolveParams { dt_vi: Some(dt.min(0.05)), ..SolveParams::with_gamma(gamma) };
    let v = value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params).map_err(err)?.value;
    let check = fixed_point_check(&superlevel(&target, 0.0).map_err(err)?, &v, 0.0).map_err(err)?;
    Ok(DiTube {
        nx,
        ny,
        target: target.values().to_vec(),
        value: v.values().to_vec(),
        verdict: check.verdict.to_string(),
        jaccard: check.metrics.jaccard,
    })
}

/// Columns of [`pendulum_run`] rows.
pub const TRAJECTORY_COLUMNS: usize = 6;

/// Pendulum run from `(x1, x2)` under worst-case disturbance. With
/// `filtered`, the reference is passed through the safety filter built on
/// the clipped signed distance to the constraint set. Rows are
/// `t, x1, x2, u, h, inside` with `inside` 1 while the state is in the
/// constraint set.
pub fn pendulum_run(x1: f64, x2: f64, t_final: f64, filtered: bool) -> Result<Vec<f64>, String> {
    if !(t_final > 0.0 && t_final <= 30.0) {
        return Err(format!("horizon must be in (0, 30], got {t_final}"));
    }
    let grid = Grid::shared(vec![
        Axis::new(0.5 * std::f64::consts::PI - 0.3, 2.0 * std::f64::consts::PI + 0.3, 151),
        Axis::new(-1.3, 1.3, 101),
    ])
    .map_err(err)?;
    let h: ScalarField = build_target(&TargetSpec::shape(Shape::PendulumX, -1.0, 1.0), &grid).map_err(err)?;
    let spec = FilterSpec::new(BarrierFunction::Field(h), 5.0, system("pendulum")).map_err(err)?;
    let bounds = grid.axes().iter().map(|a| (a.min, a.max)).collect();
    let t_final = (t_final * 100.0).round() / 100.0;
    let opts = SimOptions::pendulum(t_final, bounds);
    let schedule = PendulumSchedule::default();
    let reference = move |t: f64, x: &[f64]| schedule.control(t, x);
    let policy = if filtered { Policy::Filtered } else { Policy::Reference };
    let traj = simulate(&spec, policy, DisturbanceMode::WorstCase, &reference, &[x1, x2], &opts).map_err(err)?;
    let mut out = Vec::with_capacity(traj.len() * TRAJECTORY_COLUMNS);
    for k in 0..traj.len() {
        let x = &traj.states[k];
        out.extend([
            traj.times[k],
            x[0],
            x[1],
            traj.controls[k][0],
            traj.h_values[k],
            f64::from(u8::from(Shape::PendulumX.contains(x))),
        ]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = compare1d)]
pub fn wasm_compare_1d(gamma: f64, points: usize) -> Result<Vec<f64>, JsError> {
    compare_1d(gamma, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = diTube)]
pub fn wasm_di_tube(set: &str, gamma: f64, nx: usize, ny: usize) -> Result<DiTube, JsError> {
    di_tube(set, gamma, nx, ny).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pendulumRun)]
pub fn wasm_pendulum_run(x1: f64, x2: f64, t_final: f64, filtered: bool) -> Result<Vec<f64>, JsError> {
    pendulum_run(x1, x2, t_final, filtered).map_err(|e| JsError::new(&e))
}
