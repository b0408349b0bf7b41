//! Canned studies: the one-dimensional formulation comparison, the
//! double-integrator forward tubes, the pendulum safety filter and the
//! operator property suite. Each returns its measured quantities; `summary`
//! turns them into acceptance checks and a manifest.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::analysis::{
    barrier_residual, cbf_validate, contraction_test, fixed_point_check, inverse_optimality_check, set_metrics,
    superlevel, ContractionResult, FixedPointResult, Verdict,
};
use crate::dynamics::ControlAffineSystem;
use crate::grid::{zero_contour_2d, Axis, Grid, ScalarField};
use crate::safety_sim::{
    field_lipschitz, safety_audit, simulate, simulate_batch, AuditReport, DisturbanceMode, FilterSpec,
    PendulumSchedule, Policy, SimOptions, Trajectory,
};
use crate::solver::{levelset_solve_frt, value_iterate, Formulation, SolveParams};
use crate::targets::{
    build_target, smooth_invariant_set, AnalyticFn, BarrierFunction, DiSetKind, Shape, SmoothParams, TargetSpec,
};

use super::csv::{contours_csv, fields_csv, write_text};
use super::manifest::{Manifest, WALL_TIME_KEY};
use super::{save_hjf, Bound, Check, IoError, RunError, RunSummary};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Artifact directory; nothing is written without one.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunOptions {
    fn dir(&self) -> Result<Option<&Path>, RunError> {
        match &self.out_dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| IoError::path(d, e))?;
                Ok(Some(d))
            }
            None => Ok(None),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings(pub Vec<(&'static str, f64)>);

impl Timings {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((stage, start.elapsed().as_secs_f64()));
        out
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.0.iter().find(|(s, _)| *s == stage).map(|(_, t)| *t)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, t)| t).sum()
    }

    fn record(&self, m: &mut Manifest) {
        for (stage, t) in &self.0 {
            m.set(format!("{stage}.wall_time_s"), format!("{t:.3}"));
        }
        m.set(WALL_TIME_KEY, format!("{:.3}", self.total()));
    }
}

fn finish(summary: &RunSummary, dir: Option<&Path>) -> Result<(), RunError> {
    if let Some(d) = dir {
        summary.manifest.write(&d.join("manifest.txt"))?;
        write_text(&d.join("summary.txt"), &summary.report())?;
    }
    Ok(())
}

fn line(min: f64, max: f64, n: usize) -> Arc<Grid> {
    Grid::shared(vec![Axis::new(min, max, n)]).expect("static grid")
}

fn system(name: &str) -> ControlAffineSystem {
    ControlAffineSystem::by_name(name).expect("built-in system")
}

/// Relative slack for cap-hit detection.
const CAP_SLACK: f64 = 1e-9;

// ---------------------------------------------------------------------------
// One-dimensional comparison

/// `V(x) = 2 - x` up to `5/3` and `4 / (27 (x - 1)^2)` beyond, the forward
/// tube value of `x' = x + u` with target `2 - x` and `gamma = 2`.
pub fn frt_1d_exact(x: f64) -> f64 {
    if x <= 5.0 / 3.0 { 2.0 - x } else { 4.0 / (27.0 * (x - 1.0).powi(2)) }
}

pub const ONE_D_POINTS: usize = 601;
/// Largest round step allowed by the three-cell foot-point limit at
/// `|x + u| <= 7` and `dx = 0.01`.
pub const ONE_D_DT: f64 = 0.004;

#[derive(Debug, Clone)]
pub struct OneDStudy {
    pub dx: f64,
    pub frt_error: f64,
    /// Endpoints of `{V >= -3 dx}` for the discounted backward tube.
    pub kernel: (f64, f64),
    pub kernel_endpoint_error: f64,
    pub nodiscount_jump: f64,
    pub cbvf_cap: f64,
    pub cbvf_cap_fraction: f64,
    pub gamma_jaccard: f64,
    pub levelset_gap: f64,
    pub init_gap: f64,
    pub lipschitz: f64,
    pub target: ScalarField,
    pub fields: Vec<(Formulation, ScalarField)>,
    pub frt_gamma5: ScalarField,
    pub timings: Timings,
}

pub fn run_1d_comparison(opts: &RunOptions) -> Result<(OneDStudy, RunSummary), RunError> {
    let mut t = Timings::default();
    let grid = line(0.0, 6.0, ONE_D_POINTS);
    let dx = grid.spacing(0);
    let sys = system("integrator1d");
    let target = build_target(&TargetSpec::ramp_1d(), &grid)?;
    let params = |gamma: f64| SolveParams {
        dt_vi: Some(ONE_D_DT),
        tol_steady: Some(1e-6),
        seed: opts.seed,
        ..SolveParams::with_gamma(gamma)
    };

    let frt = t.time("frt", || value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params(2.0)))?;
    let frt_error = (0..grid.len())
        .map(|k| (frt.value.get(k) - frt_1d_exact(grid.coord(0, k))).abs())
        .fold(0.0, f64::max);

    let brt = t.time("kernel", || value_iterate(&target, Formulation::BrtDiscount, &sys, &target, &params(2.0)))?;
    let inside: Vec<f64> =
        (0..grid.len()).filter(|&k| brt.value.get(k) >= -3.0 * dx).map(|k| grid.coord(0, k)).collect();
    let kernel = (
        inside.iter().copied().fold(f64::INFINITY, f64::min),
        inside.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let kernel_endpoint_error = (kernel.0 - 0.0).abs().max((kernel.1 - 1.0).abs());

    let (nodisc, cbvf) = t.time("pathologies", || {
        let p = params(2.0);
        let a = value_iterate(&target, Formulation::BrtNoDiscount, &sys, &target, &p);
        let b = value_iterate(&target, Formulation::CbvfDiscount, &sys, &target, &p);
        (a, b)
    });
    let (nodisc, cbvf) = (nodisc?, cbvf?);
    let nodiscount_jump = (0..grid.len() - 1)
        .filter(|&k| {
            let (a, b) = (grid.coord(0, k), grid.coord(0, k + 1));
            (0.9..=1.1).contains(&a) || (0.9..=1.1).contains(&b)
        })
        .map(|k| (nodisc.value.get(k + 1) - nodisc.value.get(k)).abs())
        .fold(0.0, f64::max);
    let cbvf_cap = params(2.0).value_cap_for(&target);
    let window: Vec<usize> = (0..grid.len()).filter(|&k| grid.coord(0, k) <= 0.9 + 1e-12).collect();
    let capped = window.iter().filter(|&&k| cbvf.value.get(k).abs() >= cbvf_cap * (1.0 - CAP_SLACK)).count();
    let cbvf_cap_fraction = capped as f64 / window.len() as f64;

    let frt5 = t.time("gamma", || value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params(5.0)))?;
    let gamma_jaccard = set_metrics(&superlevel(&frt.value, 3.0 * dx)?, &superlevel(&frt5.value, 3.0 * dx)?)?.jaccard;

    let (ls, far) = t.time("cross_engine", || {
        let ls = levelset_solve_frt(&sys, &target, &params(2.0));
        let far = value_iterate(
            &ScalarField::constant(grid.clone(), 10.0),
            Formulation::FrtDiscount,
            &sys,
            &target,
            &params(2.0),
        );
        (ls, far)
    });
    let levelset_gap = ls?.value.linf_distance(&frt.value)?;
    let init_gap = far?.value.linf_distance(&frt.value)?;

    let study = OneDStudy {
        dx,
        frt_error,
        kernel,
        kernel_endpoint_error,
        nodiscount_jump,
        cbvf_cap,
        cbvf_cap_fraction,
        gamma_jaccard,
        levelset_gap,
        init_gap,
        lipschitz: field_lipschitz(&target),
        target,
        fields: vec![
            (Formulation::FrtDiscount, frt.value),
            (Formulation::BrtDiscount, brt.value),
            (Formulation::BrtNoDiscount, nodisc.value),
            (Formulation::CbvfDiscount, cbvf.value),
        ],
        frt_gamma5: frt5.value,
        timings: t,
    };
    let summary = study.summary();
    let dir = opts.dir()?;
    if let Some(d) = dir {
        for (f, v) in &study.fields {
            save_hjf(&d.join(format!("{}.hjf", f.name())), v)?;
        }
        let exact = study.target.map(|_| 0.0).with_values(
            (0..study.target.grid().len()).map(|k| frt_1d_exact(study.target.grid().coord(0, k))).collect(),
        )?;
        let mut cols: Vec<(&str, &ScalarField)> = vec![("target", &study.target), ("frt_exact", &exact)];
        cols.extend(study.fields.iter().map(|(f, v)| (f.name(), v)));
        cols.push(("frt_gamma5", &study.frt_gamma5));
        write_text(&d.join("profiles.csv"), &fields_csv(&cols)?)?;
    }
    finish(&summary, dir)?;
    Ok((study, summary))
}

impl OneDStudy {
    pub fn summary(&self) -> RunSummary {
        let dx = self.dx;
        let tol10 = 5.0 * dx * self.lipschitz;
        let mut s = RunSummary::default();
        s.lines.push(format!("kernel estimate [{:.4}, {:.4}]", self.kernel.0, self.kernel.1));
        s.checks = vec![
            Check::new("1", "1d forward tube vs closed form, linf", self.frt_error, Bound::AtMost(3.0 * dx)),
            Check::new("2", "1d kernel endpoint error", self.kernel_endpoint_error, Bound::AtMost(2.0 * dx)),
            Check::new("3a", "undiscounted backward tube jump near x=1", self.nodiscount_jump, Bound::AtLeast(1.0)),
            Check::new("3b", "barrier value cap-hit fraction on [0, 0.9]", self.cbvf_cap_fraction, Bound::AtLeast(0.5)),
            Check::new("9", "1d tube Jaccard, gamma 2 vs 5", self.gamma_jaccard, Bound::AtLeast(0.98)),
            Check::new("10", "1d level set vs value iteration, linf", self.levelset_gap, Bound::AtMost(tol10)),
            Check::new("10", "1d value iteration from +10 vs from h, linf", self.init_gap, Bound::AtMost(tol10)),
        ];
        let m = &mut s.manifest;
        m.set("study", "compare_1d");
        m.set("grid.count", ONE_D_POINTS);
        m.set("dt_vi", ONE_D_DT);
        m.set("frt.linf_error", self.frt_error);
        m.set("kernel.low", self.kernel.0);
        m.set("kernel.high", self.kernel.1);
        m.set("brt-nodiscount.max_jump", self.nodiscount_jump);
        m.set("cbvf.value_cap", self.cbvf_cap);
        m.set("cbvf.cap_fraction", self.cbvf_cap_fraction);
        m.set("gamma_invariance.jaccard", self.gamma_jaccard);
        m.set("cross_engine.levelset_gap", self.levelset_gap);
        m.set("cross_engine.init_gap", self.init_gap);
        record_checks(&s.checks.clone(), m);
        self.timings.record(m);
        s
    }
}

fn record_checks(checks: &[Check], m: &mut Manifest) {
    for (i, c) in checks.iter().enumerate() {
        m.set(format!("check.{i}.criterion_{}", c.criterion), if c.passed { "pass" } else { "fail" });
    }
}

// ---------------------------------------------------------------------------
// Double integrator

pub const DI_COUNTS: [usize; 2] = [401, 301];
pub const DI_GAMMA: f64 = 2.0;
pub const DI_DT: f64 = 0.02;
/// Radius of the disk example; the smallest tested radius whose forward
/// tube grows by more than the superset threshold.
pub const DI_SA_RADIUS: f64 = 2.5;
pub const DI_P1: f64 = 2.0;
pub const DI_P2: f64 = 3.0;
pub const DI_FIXED_POINT_JACCARD: f64 = 0.97;

pub fn di_grid(counts: [usize; 2]) -> Arc<Grid> {
    Grid::shared(vec![Axis::new(-4.0, 4.0, counts[0]), Axis::new(-3.0, 3.0, counts[1])]).expect("static grid")
}

pub fn di_expected(kind: DiSetKind) -> Verdict {
    match kind {
        DiSetKind::Sa | DiSetKind::Sb => Verdict::StrictSuperset,
        DiSetKind::Sc | DiSetKind::Sd => Verdict::FixedPoint,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiOptions {
    pub counts: [usize; 2],
    pub dt: f64,
    /// Also run the level-set engine and a far initialization per set.
    pub cross_engine: bool,
}

impl Default for DiOptions {
    fn default() -> Self {
        DiOptions { counts: DI_COUNTS, dt: DI_DT, cross_engine: true }
    }
}

#[derive(Debug, Clone)]
pub struct DiSetResult {
    pub kind: DiSetKind,
    pub check: FixedPointResult,
    pub levelset_gap: Option<f64>,
    pub init_gap: Option<f64>,
    pub lipschitz: f64,
    pub target: ScalarField,
    pub value: ScalarField,
}

#[derive(Debug, Clone)]
pub struct DiStudy {
    pub dx: f64,
    pub sets: Vec<DiSetResult>,
    pub timings: Timings,
}

pub fn run_double_integrator(opts: &RunOptions, di: &DiOptions) -> Result<(DiStudy, RunSummary), RunError> {
    let mut t = Timings::default();
    let grid = di_grid(di.counts);
    let sys = system("double_integrator");
    let params = SolveParams { dt_vi: Some(di.dt), seed: opts.seed, ..SolveParams::with_gamma(DI_GAMMA) };
    let mut sets = Vec::new();
    for kind in DiSetKind::ALL {
        let shape = Shape::DiSet { kind, p1: DI_P1, p2: DI_P2, r: DI_SA_RADIUS };
        let target = build_target(&TargetSpec::shape(shape, -1.0, 1.0), &grid)?;
        let vi = t.time(stage_name("frt", kind), || {
            value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params)
        })?;
        let check = fixed_point_check(&superlevel(&target, 0.0)?, &vi.value, 0.0)?;
        let (levelset_gap, init_gap) = if di.cross_engine {
            let (ls, far) = t.time(stage_name("cross_engine", kind), || {
                let ls = levelset_solve_frt(&sys, &target, &params);
                let far = value_iterate(
                    &ScalarField::constant(grid.clone(), 10.0),
                    Formulation::FrtDiscount,
                    &sys,
                    &target,
                    &params,
                );
                (ls, far)
            });
            (Some(ls?.value.linf_distance(&vi.value)?), Some(far?.value.linf_distance(&vi.value)?))
        } else {
            (None, None)
        };
        sets.push(DiSetResult {
            kind,
            check,
            levelset_gap,
            init_gap,
            lipschitz: field_lipschitz(&target),
            target,
            value: vi.value,
        });
    }
    let study = DiStudy { dx: grid.max_spacing(), sets, timings: t };
    let summary = study.summary();
    let dir = opts.dir()?;
    if let Some(d) = dir {
        for s in &study.sets {
            let name = s.kind.name();
            save_hjf(&d.join(format!("{name}.hjf")), &s.value)?;
            let tube = zero_contour_2d(&s.value, 0.0).unwrap_or_default();
            write_text(&d.join(format!("contours_{name}_tube.csv")), &contours_csv(&tube))?;
            let set = zero_contour_2d(&s.target, 0.0).unwrap_or_default();
            write_text(&d.join(format!("contours_{name}_target.csv")), &contours_csv(&set))?;
        }
    }
    finish(&summary, dir)?;
    Ok((study, summary))
}

fn stage_name(prefix: &str, kind: DiSetKind) -> &'static str {
    match (prefix, kind) {
        ("frt", DiSetKind::Sa) => "frt_Sa",
        ("frt", DiSetKind::Sb) => "frt_Sb",
        ("frt", DiSetKind::Sc) => "frt_Sc",
        ("frt", DiSetKind::Sd) => "frt_Sd",
        (_, DiSetKind::Sa) => "cross_engine_Sa",
        (_, DiSetKind::Sb) => "cross_engine_Sb",
        (_, DiSetKind::Sc) => "cross_engine_Sc",
        (_, DiSetKind::Sd) => "cross_engine_Sd",
    }
}

impl DiStudy {
    pub fn summary(&self) -> RunSummary {
        let mut s = RunSummary::default();
        let m = &mut s.manifest;
        m.set("study", "di_frt");
        m.set("grid.counts", format!("{},{}", self.sets[0].target.grid().axis(0).count, self.sets[0].target.grid().axis(1).count));
        m.set("gamma", DI_GAMMA);
        m.set("sa_radius", DI_SA_RADIUS);
        for r in &self.sets {
            let name = r.kind.name();
            let mt = &r.check.metrics;
            s.lines.push(format!("{name} {}", r.check.verdict));
            m.set(format!("{name}.verdict"), r.check.verdict);
            m.set(format!("{name}.jaccard"), mt.jaccard);
            m.set(format!("{name}.a_minus_b"), mt.a_minus_b_fraction);
            m.set(format!("{name}.b_minus_a"), mt.b_minus_a_fraction);
            let expected = di_expected(r.kind);
            s.checks.push(Check::flag(
                "4",
                format!(
                    "{name} verdict {} (expected {expected}; J {:.3}, a-b {:.3}, b-a {:.3})",
                    r.check.verdict, mt.jaccard, mt.a_minus_b_fraction, mt.b_minus_a_fraction
                ),
                r.check.verdict == expected,
            ));
            if expected == Verdict::FixedPoint {
                s.checks.push(Check::new("4", format!("{name} Jaccard"), mt.jaccard, Bound::AtLeast(DI_FIXED_POINT_JACCARD)));
            }
            let tol = 5.0 * self.dx * r.lipschitz;
            if let Some(g) = r.levelset_gap {
                m.set(format!("{name}.levelset_gap"), g);
                s.checks.push(Check::new("10", format!("{name} level set vs value iteration, linf"), g, Bound::AtMost(tol)));
            }
            if let Some(g) = r.init_gap {
                m.set(format!("{name}.init_gap"), g);
                s.checks.push(Check::new("10", format!("{name} value iteration from +10 vs from h, linf"), g, Bound::AtMost(tol)));
            }
        }
        record_checks(&s.checks.clone(), m);
        self.timings.record(m);
        s
    }
}

// ---------------------------------------------------------------------------
// Pendulum

pub const PENDULUM_COUNTS: [usize; 2] = [301, 201];
pub const PENDULUM_GAMMA: f64 = 5.0;
pub const PENDULUM_DT: f64 = 0.01;
pub const PENDULUM_X0: [f64; 2] = [4.0, 0.4];
pub const PENDULUM_T: f64 = 16.0;
pub const BATCH_SIZE: usize = 16;
pub const BATCH_LEVEL: f64 = 0.1;

pub fn pendulum_grid(counts: [usize; 2]) -> Arc<Grid> {
    Grid::shared(vec![Axis::new(0.5 * PI - 0.3, 2.0 * PI + 0.3, counts[0]), Axis::new(-1.3, 1.3, counts[1])])
        .expect("static grid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumOptions {
    /// A precomputed safe-set target; skips the kernel and smoothing stages.
    pub h_s: Option<ScalarField>,
    pub kernel_counts: [usize; 2],
    pub kernel_gamma: f64,
    /// The kernel estimate is `{V_k > -threshold}`.
    pub kernel_threshold: f64,
    pub margin: f64,
    pub tol_boundary: f64,
    pub cross_engine: bool,
}

impl Default for PendulumOptions {
    fn default() -> Self {
        PendulumOptions {
            h_s: None,
            kernel_counts: [451, 301],
            kernel_gamma: 0.5,
            kernel_threshold: 3e-4,
            margin: 0.07,
            tol_boundary: 0.03,
            cross_engine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelStage {
    pub value: ScalarField,
    pub iterations: usize,
    pub margin_used: f64,
    pub attempts: usize,
    pub worst_boundary_residual: f64,
}

#[derive(Debug, Clone)]
pub struct PendulumStudy {
    pub kernel: Option<KernelStage>,
    pub h_s: ScalarField,
    pub value: ScalarField,
    pub dx: f64,
    pub lipschitz: f64,
    pub residual_min: f64,
    pub residual_evaluated: usize,
    pub value_cbf_violations: usize,
    pub distance_cbf_violations: usize,
    pub batch_x0: Vec<Vec<f64>>,
    pub filtered: Vec<AuditReport>,
    pub distance: Vec<AuditReport>,
    pub reference: AuditReport,
    pub single: AuditReport,
    pub levelset_gap: Option<f64>,
    pub init_gap: Option<f64>,
    pub trajectories: Vec<(String, Trajectory)>,
    pub timings: Timings,
}

/// Sixteen initial states spread over `{V > level}`: the cell centers of an
/// 8x8 lattice on the bounding box of that set, filtered by the set and
/// thinned evenly.
pub fn batch_initial_states(v: &ScalarField, level: f64, count: usize) -> Vec<Vec<f64>> {
    let g = v.grid();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for k in (0..g.len()).filter(|&k| v.get(k) > level) {
        let x = g.point(k);
        for d in 0..2 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let mut cands = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            let x = vec![
                lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / 8.0,
                lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / 8.0,
            ];
            if v.sample(&x) > level {
                cands.push(x);
            }
        }
    }
    if cands.len() <= count {
        return cands;
    }
    (0..count).map(|i| cands[i * cands.len() / count].clone()).collect()
}

pub fn run_pendulum(opts: &RunOptions, p: &PendulumOptions) -> Result<(PendulumStudy, RunSummary), RunError> {
    let mut t = Timings::default();
    let sys = system("pendulum");
    let x_shape = Shape::PendulumX;
    let x_spec = TargetSpec::shape(x_shape.clone(), -1.0, 1.0);

    let (kernel, h_s) = match &p.h_s {
        Some(h) => (None, h.clone()),
        None => {
            let kgrid = pendulum_grid(p.kernel_counts);
            let target = build_target(&x_spec, &kgrid)?;
            let alpha = sys.lf_dissipation_bounds(&kgrid);
            let dt = (0..2).map(|d| 3.0 * kgrid.spacing(d) / alpha[d]).fold(f64::INFINITY, f64::min) * 0.999;
            let params = SolveParams {
                dt_vi: Some(dt),
                tol_steady: Some(1e-6),
                seed: opts.seed,
                ..SolveParams::with_gamma(p.kernel_gamma)
            };
            let v0 = target.map(|v| v.min(0.0));
            let k = t.time("kernel", || value_iterate(&v0, Formulation::BrtDiscount, &sys, &target, &params))?;
            let shifted = k.value.map(|v| v + p.kernel_threshold);
            let sp = SmoothParams { margin: p.margin, tol_boundary: Some(p.tol_boundary), ..SmoothParams::default() };
            let smoothed = t.time("smoothing", || smooth_invariant_set(&shifted, &sys, &sp))?;
            let h_s = smoothed.resample(&pendulum_grid(PENDULUM_COUNTS))?;
            let stage = KernelStage {
                value: k.value,
                iterations: k.iterations,
                margin_used: smoothed.margin_used,
                attempts: smoothed.attempts,
                worst_boundary_residual: smoothed.report.worst,
            };
            (Some(stage), h_s)
        }
    };
    let grid = h_s.grid().clone();
    let dx = grid.max_spacing();
    let params = SolveParams { dt_vi: Some(PENDULUM_DT), seed: opts.seed, ..SolveParams::with_gamma(PENDULUM_GAMMA) };
    let vi = t.time("frt", || value_iterate(&h_s, Formulation::FrtDiscount, &sys, &h_s, &params))?;
    let v = vi.value;

    let scale = 0.05 * PENDULUM_GAMMA * 2.0;
    let (residual, value_cbf, distance_cbf) = t.time("residual", || -> Result<_, RunError> {
        let band = superlevel(&v, 3.0 * dx)?;
        let residual = barrier_residual(&v, &sys, PENDULUM_GAMMA, &band, scale)?;
        let value_cbf = cbf_validate(&BarrierFunction::Field(v.clone()), &sys, PENDULUM_GAMMA, &band, scale)?;
        let x_field = build_target(&x_spec, &grid)?;
        let distance_cbf = cbf_validate(
            &BarrierFunction::Field(x_field.clone()),
            &sys,
            PENDULUM_GAMMA,
            &superlevel(&x_field, 0.0)?,
            scale,
        )?;
        Ok((residual, value_cbf, distance_cbf))
    })?;

    let bounds: Vec<(f64, f64)> = grid.axes().iter().map(|a| (a.min, a.max)).collect();
    let sim = SimOptions::pendulum(PENDULUM_T, bounds);
    let schedule = PendulumSchedule::default();
    let reference = move |t: f64, x: &[f64]| schedule.control(t, x);
    let value_filter = FilterSpec::new(BarrierFunction::Field(v.clone()), PENDULUM_GAMMA, sys.clone())?;
    let x_field = build_target(&x_spec, &grid)?;
    let distance_filter = FilterSpec::new(BarrierFunction::Field(x_field), PENDULUM_GAMMA, sys.clone())?;
    let hs_fn = BarrierFunction::Field(h_s.clone());
    let batch_x0 = batch_initial_states(&v, BATCH_LEVEL, BATCH_SIZE);

    let sims = t.time("simulation", || -> Result<_, RunError> {
        let wc = DisturbanceMode::WorstCase;
        let filtered = simulate_batch(&value_filter, Policy::Filtered, wc, &reference, &batch_x0, &sim)?;
        let distance = simulate_batch(&distance_filter, Policy::Filtered, wc, &reference, &batch_x0, &sim)?;
        let reference_run = simulate(&value_filter, Policy::Reference, wc, &reference, &PENDULUM_X0, &sim)?;
        let single = simulate(&value_filter, Policy::Filtered, wc, &reference, &PENDULUM_X0, &sim)?;
        Ok((filtered, distance, reference_run, single))
    })?;
    let (filtered_runs, distance_runs, reference_run, single_run) = sims;
    let audit = |tr: &Trajectory| safety_audit(tr, &hs_fn, &x_shape);
    let filtered = filtered_runs.iter().map(audit).collect::<Result<Vec<_>, _>>()?;
    let distance = distance_runs.iter().map(audit).collect::<Result<Vec<_>, _>>()?;
    let reference_audit = audit(&reference_run)?;
    let single = audit(&single_run)?;

    let (levelset_gap, init_gap) = if p.cross_engine {
        let (ls, far) = t.time("cross_engine", || {
            let ls = levelset_solve_frt(&sys, &h_s, &params);
            let far =
                value_iterate(&ScalarField::constant(grid.clone(), 10.0), Formulation::FrtDiscount, &sys, &h_s, &params);
            (ls, far)
        });
        (Some(ls?.value.linf_distance(&v)?), Some(far?.value.linf_distance(&v)?))
    } else {
        (None, None)
    };

    let mut trajectories = vec![("reference".to_string(), reference_run), ("filtered_x0".to_string(), single_run)];
    trajectories.extend(filtered_runs.into_iter().enumerate().map(|(i, tr)| (format!("filtered_batch_{i:02}"), tr)));
    trajectories.extend(distance_runs.into_iter().enumerate().map(|(i, tr)| (format!("distance_batch_{i:02}"), tr)));

    let study = PendulumStudy {
        kernel,
        lipschitz: field_lipschitz(&h_s),
        h_s,
        value: v,
        dx,
        residual_min: residual.min_residual,
        residual_evaluated: residual.evaluated_count(),
        value_cbf_violations: value_cbf.violations.len(),
        distance_cbf_violations: distance_cbf.violations.len(),
        batch_x0,
        filtered,
        distance,
        reference: reference_audit,
        single,
        levelset_gap,
        init_gap,
        trajectories,
        timings: t,
    };
    let summary = study.summary();
    let dir = opts.dir()?;
    if let Some(d) = dir {
        if let Some(k) = &study.kernel {
            save_hjf(&d.join("kernel.hjf"), &k.value)?;
            let c = zero_contour_2d(&k.value.map(|v| v + p.kernel_threshold), 0.0).unwrap_or_default();
            write_text(&d.join("contours_kernel.csv"), &contours_csv(&c))?;
        }
        save_hjf(&d.join("h_s.hjf"), &study.h_s)?;
        save_hjf(&d.join("value.hjf"), &study.value)?;
        for (name, field, level) in [("h_s", &study.h_s, 0.0), ("value", &study.value, 0.0)] {
            let c = zero_contour_2d(field, level).unwrap_or_default();
            write_text(&d.join(format!("contours_{name}.csv")), &contours_csv(&c))?;
        }
        for (name, tr) in &study.trajectories {
            write_text(&d.join(format!("{name}.csv")), &tr.to_csv())?;
        }
    }
    finish(&summary, dir)?;
    Ok((study, summary))
}

impl PendulumStudy {
    /// Lower bound on `h_S` along filtered trajectories.
    pub fn safety_bound(&self) -> f64 {
        -2.0 * self.dx * self.lipschitz
    }

    pub fn summary(&self) -> RunSummary {
        let mut s = RunSummary::default();
        let bound = self.safety_bound();
        let min_h = self.filtered.iter().map(|a| a.min_h).fold(f64::INFINITY, f64::min);
        let infeasible = self.filtered.iter().filter(|a| a.feasible_fraction < 1.0).count();
        let distance_exits = self.distance.iter().filter(|a| a.exit_time.is_some()).count();
        let residual_bound = -0.05 * PENDULUM_GAMMA * 2.0;
        s.lines.push(format!(
            "value function as barrier: {} violations; clipped distance to X: {} violations",
            self.value_cbf_violations, self.distance_cbf_violations
        ));
        s.lines.push(format!(
            "filtered run from (4, 0.4): min h_S {:.4}, feasible fraction {:.4}, exit {}",
            self.single.min_h,
            self.single.feasible_fraction,
            self.single.exit_time.map_or("none".into(), |t| format!("t={t:.2}"))
        ));
        s.checks.push(Check::new(
            "7",
            format!("pendulum barrier residual min over {} nodes", self.residual_evaluated),
            self.residual_min,
            Bound::AtLeast(residual_bound),
        ));
        s.checks.push(Check::new("8a", "filtered batch min h_S", min_h, Bound::AtLeast(bound)));
        s.checks.push(Check::new("8a", "filtered batch runs with an infeasible step", infeasible as f64, Bound::AtMost(0.0)));
        s.checks.push(Check::flag(
            "8b",
            format!(
                "reference run from (4, 0.4) exits X ({})",
                self.reference.exit_time.map_or("never".into(), |t| format!("t={t:.2}"))
            ),
            self.reference.exit_time.is_some(),
        ));
        s.checks.push(Check::new("8c", "distance-filter batch runs exiting X", distance_exits as f64, Bound::AtLeast(1.0)));
        let tol = 5.0 * self.dx * self.lipschitz;
        if let Some(g) = self.levelset_gap {
            s.checks.push(Check::new("10", "pendulum level set vs value iteration, linf", g, Bound::AtMost(tol)));
        }
        if let Some(g) = self.init_gap {
            s.checks.push(Check::new("10", "pendulum value iteration from +10 vs from h, linf", g, Bound::AtMost(tol)));
        }
        let m = &mut s.manifest;
        m.set("study", "pendulum");
        m.set("gamma", PENDULUM_GAMMA);
        m.set("dx", self.dx);
        m.set("h_s.lipschitz", self.lipschitz);
        if let Some(k) = &self.kernel {
            m.set("kernel.iterations", k.iterations);
            m.set("kernel.margin_used", k.margin_used);
            m.set("kernel.smoothing_attempts", k.attempts);
            m.set("kernel.worst_boundary_residual", k.worst_boundary_residual);
        }
        m.set("residual.min", self.residual_min);
        m.set("cbf.value_violations", self.value_cbf_violations);
        m.set("cbf.distance_violations", self.distance_cbf_violations);
        m.set("batch.min_h", min_h);
        m.set("batch.infeasible_runs", infeasible);
        m.set("batch.distance_exits", distance_exits);
        for (i, (x0, a)) in self.batch_x0.iter().zip(&self.filtered).enumerate() {
            m.set(format!("batch.{i:02}.x0"), format!("{:.4},{:.4}", x0[0], x0[1]));
            m.set(format!("batch.{i:02}.min_h"), a.min_h);
        }
        m.set("reference.exit_time", self.reference.exit_time.map_or("none".into(), |t| t.to_string()));
        m.set("single.min_h", self.single.min_h);
        m.set("single.feasible_fraction", self.single.feasible_fraction);
        if let Some(g) = self.levelset_gap {
            m.set("cross_engine.levelset_gap", g);
        }
        if let Some(g) = self.init_gap {
            m.set("cross_engine.init_gap", g);
        }
        record_checks(&s.checks.clone(), m);
        self.timings.record(m);
        s
    }
}

// ---------------------------------------------------------------------------
// Operator properties

pub const CONTRACTION_TRIALS: usize = 20;
pub const CONTRACTION_SLACK: f64 = 1e-3;
/// Contraction step on the double-integrator grid.
pub const DI_CONTRACTION_DT: f64 = 0.01;
pub const INVERSE_GAMMAS: [f64; 2] = [4.0, 8.0];
pub const INVERSE_POINTS: usize = 801;
/// Steady-state tolerance well below the discretization error, so the
/// refinement ratio measures the scheme and not the stopping rule.
pub const INVERSE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseRow {
    pub gamma: f64,
    pub dx: f64,
    pub error: f64,
    pub error_fine: f64,
}

impl InverseRow {
    pub fn ratio(&self) -> f64 {
        self.error / self.error_fine
    }
}

#[derive(Debug, Clone)]
pub struct PropertyStudy {
    pub contraction_1d: ContractionResult,
    pub contraction_di: ContractionResult,
    pub inverse: Vec<InverseRow>,
    pub dx: f64,
    pub levelset_gap: f64,
    pub init_gap: f64,
    pub timings: Timings,
}

pub fn quadratic_barrier() -> AnalyticFn {
    AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0] }
}

pub fn run_property_suite(opts: &RunOptions) -> Result<(PropertyStudy, RunSummary), RunError> {
    let mut t = Timings::default();
    let (c1, c2) = t.time("contraction", || -> Result<_, RunError> {
        let g1 = line(0.0, 6.0, ONE_D_POINTS);
        let t1 = build_target(&TargetSpec::ramp_1d(), &g1)?;
        let c1 = contraction_test(&system("integrator1d"), &t1, 2.0, ONE_D_DT, CONTRACTION_TRIALS, opts.seed)?;
        let g2 = di_grid(DI_COUNTS);
        let shape = Shape::DiSet { kind: DiSetKind::Sd, p1: DI_P1, p2: DI_P2, r: DI_SA_RADIUS };
        let t2 = build_target(&TargetSpec::shape(shape, -1.0, 1.0), &g2)?;
        let c2 = contraction_test(&system("double_integrator"), &t2, 2.0, DI_CONTRACTION_DT, CONTRACTION_TRIALS, opts.seed)?;
        Ok((c1, c2))
    })?;

    let sys = system("single_integrator1d");
    let h = quadratic_barrier();
    let inverse = t.time("inverse_optimality", || -> Result<_, RunError> {
        let mut rows = Vec::new();
        for gamma in INVERSE_GAMMAS {
            let params = SolveParams { tol_steady: Some(INVERSE_TOL), seed: opts.seed, ..SolveParams::with_gamma(gamma) };
            let coarse = line(-2.0, 2.0, INVERSE_POINTS);
            let fine = line(-2.0, 2.0, 2 * INVERSE_POINTS - 1);
            let e = inverse_optimality_check(&h, &sys, &coarse, &params)?.linf_error;
            let ef = inverse_optimality_check(&h, &sys, &fine, &params)?.linf_error;
            rows.push(InverseRow { gamma, dx: coarse.spacing(0), error: e, error_fine: ef });
        }
        Ok(rows)
    })?;

    let (levelset_gap, init_gap) = t.time("cross_engine", || -> Result<_, RunError> {
        let g = line(-2.0, 2.0, INVERSE_POINTS);
        let target = ScalarField::from_fn(g.clone(), |x| h.value(x));
        let params = SolveParams { dt_vi: Some(0.01), seed: opts.seed, ..SolveParams::with_gamma(INVERSE_GAMMAS[0]) };
        let ls = levelset_solve_frt(&sys, &target, &params)?;
        let vi = value_iterate(&target, Formulation::FrtDiscount, &sys, &target, &params)?;
        let far = value_iterate(&ScalarField::constant(g, 10.0), Formulation::FrtDiscount, &sys, &target, &params)?;
        Ok((ls.value.linf_distance(&vi.value)?, far.value.linf_distance(&vi.value)?))
    })?;

    let study = PropertyStudy {
        contraction_1d: c1,
        contraction_di: c2,
        inverse,
        dx: 4.0 / (INVERSE_POINTS - 1) as f64,
        levelset_gap,
        init_gap,
        timings: t,
    };
    let summary = study.summary();
    let dir = opts.dir()?;
    finish(&summary, dir)?;
    Ok((study, summary))
}

impl PropertyStudy {
    pub fn summary(&self) -> RunSummary {
        let mut s = RunSummary::default();
        for (name, c) in [("1d", &self.contraction_1d), ("double integrator", &self.contraction_di)] {
            s.lines.push(format!("contraction {name}: max ratio {:.6} over {} pairs", c.max_ratio, c.trials));
            s.checks.push(Check::new(
                "5",
                format!("{name} contraction max ratio"),
                c.max_ratio,
                Bound::AtMost(c.bound + CONTRACTION_SLACK),
            ));
        }
        for r in &self.inverse {
            s.checks.push(Check::new(
                "6",
                format!("inverse optimality linf error, gamma {}", r.gamma),
                r.error,
                Bound::AtMost(3.0 * r.dx),
            ));
            s.checks.push(Check::new(
                "6",
                format!("inverse optimality refinement ratio, gamma {}", r.gamma),
                r.ratio(),
                Bound::Between(2.0 * 0.7, 2.0 * 1.3),
            ));
        }
        let tol = 5.0 * self.dx * 4.0;
        s.checks.push(Check::new("10", "single integrator level set vs value iteration, linf", self.levelset_gap, Bound::AtMost(tol)));
        s.checks.push(Check::new("10", "single integrator value iteration from +10 vs from h, linf", self.init_gap, Bound::AtMost(tol)));
        let m = &mut s.manifest;
        m.set("study", "properties");
        m.set("contraction.1d.max_ratio", self.contraction_1d.max_ratio);
        m.set("contraction.1d.bound", self.contraction_1d.bound);
        m.set("contraction.di.max_ratio", self.contraction_di.max_ratio);
        m.set("contraction.di.bound", self.contraction_di.bound);
        for r in &self.inverse {
            m.set(format!("inverse.gamma{}.error", r.gamma), r.error);
            m.set(format!("inverse.gamma{}.error_fine", r.gamma), r.error_fine);
        }
        m.set("cross_engine.levelset_gap", self.levelset_gap);
        m.set("cross_engine.init_gap", self.init_gap);
        record_checks(&s.checks.clone(), m);
        self.timings.record(m);
        s
    }
}
