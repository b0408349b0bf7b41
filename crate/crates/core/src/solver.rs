//! Value-function solvers.
//!
//! Two engines compute the discounted forward-reachable-tube value:
//!
//! * a time-marching level-set scheme (Lax-Friedrichs Hamiltonian, two-stage
//!   TVD Runge-Kutta, obstacle clamp `W >= h`) run until `W_t` vanishes;
//! * semi-Lagrangian value iteration, which also covers the backward
//!   reachability formulations used for comparison.

use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{BoxSet, ControlAffineSystem};
use crate::grid::{Grid, ScalarField, MAX_DIM};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid solver parameter: {0}")]
    InvalidParams(String),
    #[error("field lives on a {got}D grid, system has {expected} states")]
    Dimension { expected: usize, got: usize },
    #[error("value and target fields live on different grids")]
    GridMismatch,
    #[error("non-finite value at node {index} after iteration {iteration}")]
    NonFinite { iteration: usize, index: usize },
    #[error("diverged at iteration {iteration}: residual {residual:e} exceeds 10x the initial {initial:e}")]
    Divergence { iteration: usize, residual: f64, initial: f64 },
    #[error("residual ratio {ratio} at iteration {iteration} exceeds the contraction bound {bound}")]
    ContractionViolated { iteration: usize, ratio: f64, bound: f64 },
    #[error("time step {dt} moves foot points more than 3 cells along axis {axis} (limit {limit})")]
    FootPoint { dt: f64, axis: usize, limit: f64 },
}

/// Reachability formulations computed by value iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// Discounted forward reachable tube (the inevitable FRT value).
    FrtDiscount,
    /// Discounted backward reachable tube / viability kernel.
    BrtDiscount,
    /// Undiscounted viability value.
    BrtNoDiscount,
    /// Control-barrier value function with growth factor `e^{gamma dt}`.
    CbvfDiscount,
}

impl Formulation {
    pub const ALL: [Formulation; 4] =
        [Formulation::FrtDiscount, Formulation::BrtDiscount, Formulation::BrtNoDiscount, Formulation::CbvfDiscount];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::FrtDiscount => "frt",
            Formulation::BrtDiscount => "brt",
            Formulation::BrtNoDiscount => "brt-nodiscount",
            Formulation::CbvfDiscount => "cbvf",
        }
    }

    /// Also accepts the long spellings `frt_discount`, `brt_discount`,
    /// `brt_nodiscount` and `cbvf_discount`.
    pub fn from_name(name: &str) -> Option<Self> {
        Formulation::ALL.into_iter().find(|f| f.name() == name || f.long_name() == name)
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Formulation::FrtDiscount => "frt_discount",
            Formulation::BrtDiscount => "brt_discount",
            Formulation::BrtNoDiscount => "brt_nodiscount",
            Formulation::CbvfDiscount => "cbvf_discount",
        }
    }

    /// Whether the Bellman backup is a sup-norm contraction with rate
    /// `e^{-gamma dt}`.
    pub fn is_contraction(self) -> bool {
        matches!(self, Formulation::FrtDiscount | Formulation::BrtDiscount)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveParams {
    pub gamma: f64,
    pub cfl: f64,
    /// Steady-state tolerance; `None` means 1e-3 of the target's value range.
    pub tol_steady: Option<f64>,
    pub max_time: f64,
    /// Value-iteration step; `None` means `0.25 min dx / max alpha`.
    pub dt_vi: Option<f64>,
    pub max_iters: usize,
    /// Growth cap of the barrier value function; `None` means 10x the target
    /// maximum.
    pub value_cap: Option<f64>,
    pub input_samples_per_dim: usize,
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            gamma: 2.0,
            cfl: 0.5,
            tol_steady: None,
            max_time: 20.0,
            dt_vi: None,
            max_iters: 200_000,
            value_cap: None,
            input_samples_per_dim: 5,
            lipschitz_samples: 2000,
            seed: 0,
        }
    }
}

impl SolveParams {
    pub fn with_gamma(gamma: f64) -> Self {
        SolveParams { gamma, ..Default::default() }
    }

    fn validate(&self, formulation: Option<Formulation>) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidParams(m.to_string()));
        if formulation != Some(Formulation::BrtNoDiscount) && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive and finite");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl must lie in (0, 1]");
        }
        if !(self.max_time > 0.0) {
            return bad("max_time must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.input_samples_per_dim < 2 {
            return bad("input_samples_per_dim must be at least 2");
        }
        if let Some(t) = self.tol_steady {
            if !(t > 0.0) {
                return bad("tol_steady must be positive");
            }
        }
        if let Some(dt) = self.dt_vi {
            if !(dt > 0.0) {
                return bad("dt_vi must be positive");
            }
        }
        if let Some(c) = self.value_cap {
            if !(c > 0.0) {
                return bad("value_cap must be positive");
            }
        }
        Ok(())
    }

    /// Steady-state tolerance resolved against a target field.
    pub fn tolerance_for(&self, target: &ScalarField) -> f64 {
        self.tol_steady.unwrap_or_else(|| 1e-3 * value_scale(target))
    }

    pub fn value_cap_for(&self, target: &ScalarField) -> f64 {
        self.value_cap.unwrap_or_else(|| {
            let m = target.max().abs();
            if m > 0.0 { 10.0 * m } else { 10.0 }
        })
    }

    /// Value-iteration step resolved against a system and grid.
    pub fn dt_vi_for(&self, system: &ControlAffineSystem, grid: &Grid) -> f64 {
        self.dt_vi.unwrap_or_else(|| {
            let alpha = system.lf_dissipation_bounds(grid);
            let amax = alpha.iter().copied().fold(0.0, f64::max);
            if amax > 0.0 { 0.25 * grid.min_spacing() / amax } else { 0.25 * grid.min_spacing() }
        })
    }
}

/// Value range of a target, falling back to its magnitude for constants.
pub fn value_scale(target: &ScalarField) -> f64 {
    let range = target.max() - target.min();
    if range > 0.0 {
        range
    } else {
        let m = target.max().abs().max(target.min().abs());
        if m > 0.0 { m } else { 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCheck {
    pub gamma: f64,
    pub lipschitz: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub value: ScalarField,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Time step of the scheme (level-set step or value-iteration step).
    pub cfl_dt_used: f64,
    pub tolerance: f64,
    pub gamma_vs_lipschitz: GammaCheck,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

fn gamma_check(system: &ControlAffineSystem, grid: &Grid, params: &SolveParams) -> GammaCheck {
    let l = system.lipschitz_estimate(grid, params.lipschitz_samples, params.seed);
    GammaCheck { gamma: params.gamma, lipschitz: l, satisfied: l < params.gamma }
}

fn check_fields(system: &ControlAffineSystem, target: &ScalarField, v: Option<&ScalarField>) -> Result<(), SolveError> {
    let g = target.grid();
    if g.ndim() != system.state_dim() {
        return Err(SolveError::Dimension { expected: system.state_dim(), got: g.ndim() });
    }
    if let Some(v) = v {
        if !v.same_grid(target) {
            return Err(SolveError::GridMismatch);
        }
        if let Some(k) = v.values().iter().position(|x| !x.is_finite()) {
            return Err(SolveError::NonFinite { iteration: 0, index: k });
        }
    }
    if let Some(k) = target.values().iter().position(|x| !x.is_finite()) {
        return Err(SolveError::NonFinite { iteration: 0, index: k });
    }
    Ok(())
}

/// Drift and input columns evaluated once per grid node, laid out as
/// `[f0 | g_u,0 .. g_u,mu-1 | g_d,0 .. g_d,md-1]` with `n` entries each.
struct NodeTerms {
    n: usize,
    mu: usize,
    md: usize,
    stride: usize,
    data: Vec<f64>,
    coords: Vec<f64>,
    index: Vec<u32>,
    u: BoxSet,
    d: BoxSet,
}

impl NodeTerms {
    fn new(system: &ControlAffineSystem, grid: &Grid) -> Self {
        let (n, mu, md) = (system.state_dim(), system.control_dim(), system.disturbance_dim());
        let stride = n * (1 + mu + md);
        let mut data = vec![0.0; grid.len() * stride];
        let mut coords = vec![0.0; grid.len() * n];
        let mut index = vec![0u32; grid.len() * n];
        let mut col = [0.0; MAX_DIM];
        for k in 0..grid.len() {
            let x = &mut coords[k * n..(k + 1) * n];
            grid.point_into(k, x);
            let idx = grid.unravel(k);
            for dd in 0..n {
                index[k * n + dd] = idx[dd] as u32;
            }
            let row = &mut data[k * stride..(k + 1) * stride];
            system.drift(x, &mut col);
            row[..n].copy_from_slice(&col[..n]);
            for j in 0..mu {
                system.control_column(x, j, &mut col);
                row[n * (1 + j)..n * (2 + j)].copy_from_slice(&col[..n]);
            }
            for q in 0..md {
                system.disturbance_column(x, q, &mut col);
                row[n * (1 + mu + q)..n * (2 + mu + q)].copy_from_slice(&col[..n]);
            }
        }
        NodeTerms {
            n,
            mu,
            md,
            stride,
            data,
            coords,
            index,
            u: system.control_box().clone(),
            d: system.disturbance_box().clone(),
        }
    }

    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.stride..(k + 1) * self.stride]
    }

    /// Closed-form `max_u min_d p . f` at node `k`.
    #[inline]
    fn hamiltonian(&self, k: usize, p: &[f64]) -> f64 {
        let n = self.n;
        let row = self.row(k);
        let dot = |c: usize| (0..n).map(|i| row[c * n + i] * p[i]).sum::<f64>();
        let mut h = dot(0);
        for j in 0..self.mu {
            let pg = dot(1 + j);
            h += pg * self.u.mid(j) + pg.abs() * self.u.half(j);
        }
        for q in 0..self.md {
            let pg = dot(1 + self.mu + q);
            h += pg * self.d.mid(q) - pg.abs() * self.d.half(q);
        }
        h
    }

    /// `f(x_k, u, d)` into `out`.
    #[inline]
    fn flow(&self, k: usize, u: &[f64], d: &[f64], out: &mut [f64]) {
        let n = self.n;
        let row = self.row(k);
        out[..n].copy_from_slice(&row[..n]);
        for (j, &uj) in u.iter().enumerate() {
            for i in 0..n {
                out[i] += row[n * (1 + j) + i] * uj;
            }
        }
        for (q, &dq) in d.iter().enumerate() {
            for i in 0..n {
                out[i] += row[n * (1 + self.mu + q) + i] * dq;
            }
        }
    }
}

/// Time-marching solve of the stationary variational inequality
/// `min{V - h, max_u min_d grad V . f + gamma V} = 0`, starting from
/// `W = h` and stopping once `max |W_t| <= tol` or `max_time` is reached.
pub fn levelset_solve_frt(
    system: &ControlAffineSystem,
    target: &ScalarField,
    params: &SolveParams,
) -> Result<SolveReport, SolveError> {
    params.validate(Some(Formulation::FrtDiscount))?;
    check_fields(system, target, None)?;
    let grid = target.grid().clone();
    let terms = NodeTerms::new(system, &grid);
    let alpha = system.lf_dissipation_bounds(&grid);
    let rate: f64 = alpha.iter().zip(grid.spacings()).map(|(a, h)| a / h).sum();
    let dt = if rate > 0.0 { params.cfl / rate } else { params.cfl * grid.min_spacing() };
    let tol = params.tolerance_for(target);
    let gamma = params.gamma;
    let h = target.values();

    let mut w = target.clone();
    let mut stage = target.clone();
    let mut lw = vec![0.0; grid.len()];
    let mut history = Vec::new();
    let mut t = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters && t < params.max_time {
        lf_rate(&terms, &w, &alpha, gamma, &mut lw);
        {
            let wv = w.values();
            let sv = stage.values_mut();
            for k in 0..sv.len() {
                sv[k] = (wv[k] + dt * lw[k]).max(h[k]);
            }
        }
        lf_rate(&terms, &stage, &alpha, gamma, &mut lw);
        let mut change: f64 = 0.0;
        {
            let sv = stage.values().to_vec();
            let wv = w.values_mut();
            for k in 0..wv.len() {
                let next = (0.5 * wv[k] + 0.5 * (sv[k] + dt * lw[k])).max(h[k]);
                if !next.is_finite() {
                    return Err(SolveError::NonFinite { iteration: iterations + 1, index: k });
                }
                change = change.max((next - wv[k]).abs());
                wv[k] = next;
            }
        }
        iterations += 1;
        t += dt;
        let residual = change / dt;
        history.push(residual);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        value: w,
        residual_history: history,
        iterations,
        converged,
        cfl_dt_used: dt,
        tolerance: tol,
        gamma_vs_lipschitz: gamma_check(system, &grid, params),
    })
}

/// `out = -H_LF(W) - gamma W` with the Lax-Friedrichs numerical Hamiltonian.
fn lf_rate(terms: &NodeTerms, w: &ScalarField, alpha: &[f64], gamma: f64, out: &mut [f64]) {
    let n = terms.n;
    par::fill(out, |k| {
        let mut p = [0.0; MAX_DIM];
        let mut dissipation = 0.0;
        for d in 0..n {
            let (pm, pp) = w.one_sided(k, terms.index[k * n + d] as usize, d);
            p[d] = 0.5 * (pm + pp);
            dissipation += alpha[d] * 0.5 * (pp - pm);
        }
        let h_lf = terms.hamiltonian(k, &p[..n]) - dissipation;
        -h_lf - gamma * w.get(k)
    });
}

/// One semi-Lagrangian backup operator, with per-node terms and input
/// samples precomputed for repeated application.
pub struct BellmanOperator {
    formulation: Formulation,
    terms: NodeTerms,
    target: ScalarField,
    controls: Vec<Vec<f64>>,
    disturbances: Vec<Vec<f64>>,
    dt: f64,
    factor: f64,
    value_cap: f64,
}

fn cartesian(b: &BoxSet, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for k in 0..b.dim() {
        let samples = b.samples(k, n);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                samples.iter().map(move |&s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    out
}

impl BellmanOperator {
    pub fn new(
        formulation: Formulation,
        system: &ControlAffineSystem,
        target: &ScalarField,
        params: &SolveParams,
        dt: f64,
    ) -> Result<Self, SolveError> {
        params.validate(Some(formulation))?;
        check_fields(system, target, None)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolveError::InvalidParams(format!("backup step must be positive, got {dt}")));
        }
        let grid = target.grid();
        let alpha = system.lf_dissipation_bounds(grid);
        for (axis, (a, h)) in alpha.iter().zip(grid.spacings()).enumerate() {
            if dt * a > 3.0 * h * (1.0 + 1e-12) {
                return Err(SolveError::FootPoint { dt, axis, limit: 3.0 * h / a });
            }
        }
        let factor = match formulation {
            Formulation::FrtDiscount | Formulation::BrtDiscount => (-params.gamma * dt).exp(),
            Formulation::BrtNoDiscount => 1.0,
            Formulation::CbvfDiscount => (params.gamma * dt).exp(),
        };
        Ok(BellmanOperator {
            formulation,
            terms: NodeTerms::new(system, grid),
            target: target.clone(),
            controls: cartesian(system.control_box(), params.input_samples_per_dim),
            disturbances: cartesian(system.disturbance_box(), params.input_samples_per_dim),
            dt,
            factor,
            value_cap: params.value_cap_for(target),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Multiplier applied to the propagated value (`e^{-gamma dt}` for the
    /// contracting formulations).
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn apply(&self, v: &ScalarField) -> Result<ScalarField, SolveError> {
        if !v.same_grid(&self.target) {
            return Err(SolveError::GridMismatch);
        }
        let mut out = v.clone();
        self.apply_into(v, out.values_mut());
        Ok(out)
    }

    fn apply_into(&self, v: &ScalarField, out: &mut [f64]) {
        if self.terms.n == 2 && self.controls.len() <= FAST_SAMPLES && self.disturbances.len() <= FAST_SAMPLES {
            return self.apply_into_2d(v, out);
        }
        self.apply_into_nd(v, out);
    }

    /// Dimension-generic backup; the reference for the planar fast path.
    fn apply_into_nd(&self, v: &ScalarField, out: &mut [f64]) {
        let n = self.terms.n;
        let forward = self.formulation == Formulation::FrtDiscount;
        let sign = if forward { -self.dt } else { self.dt };
        par::fill(out, |k| {
            let x = &self.terms.coords[k * n..(k + 1) * n];
            let mut f = [0.0; MAX_DIM];
            let mut foot = [0.0; MAX_DIM];
            let mut outer = if forward { f64::INFINITY } else { f64::NEG_INFINITY };
            for u in &self.controls {
                let mut inner = if forward { f64::NEG_INFINITY } else { f64::INFINITY };
                for d in &self.disturbances {
                    self.terms.flow(k, u, d, &mut f);
                    for i in 0..n {
                        foot[i] = x[i] + sign * f[i];
                    }
                    let val = v.sample(&foot[..n]);
                    inner = if forward { inner.max(val) } else { inner.min(val) };
                }
                outer = if forward { outer.min(inner) } else { outer.max(inner) };
            }
            self.finish(k, outer)
        });
    }

    /// Planar specialization: per-node input offsets are formed once and an
    /// axis that no input moves is located once per node.
    fn apply_into_2d(&self, v: &ScalarField, out: &mut [f64]) {
        let forward = self.formulation == Formulation::FrtDiscount;
        let sign = if forward { -self.dt } else { self.dt };
        let grid = v.grid();
        let axes = [AxisLookup::new(grid, 0), AxisLookup::new(grid, 1)];
        let stride = grid.strides()[0];
        let vals = v.values();
        let (mu, nu, nd) = (self.terms.mu, self.controls.len(), self.disturbances.len());
        par::fill(out, |k| {
            let row = self.terms.row(k);
            let x = &self.terms.coords[2 * k..2 * k + 2];
            let base = [x[0] + sign * row[0], x[1] + sign * row[1]];
            let mut u_off = [[0.0; 2]; FAST_SAMPLES];
            let mut d_off = [[0.0; 2]; FAST_SAMPLES];
            for (j, u) in self.controls.iter().enumerate() {
                for (c, &uc) in u.iter().enumerate() {
                    for i in 0..2 {
                        u_off[j][i] += sign * row[2 * (1 + c) + i] * uc;
                    }
                }
            }
            for (q, d) in self.disturbances.iter().enumerate() {
                for (c, &dc) in d.iter().enumerate() {
                    for i in 0..2 {
                        d_off[q][i] += sign * row[2 * (1 + mu + c) + i] * dc;
                    }
                }
            }
            let fixed0 = u_off[..nu].iter().chain(&d_off[..nd]).all(|o| o[0] == 0.0);
            let loc0 = axes[0].locate(base[0]);
            let mut outer = if forward { f64::INFINITY } else { f64::NEG_INFINITY };
            for uo in &u_off[..nu] {
                let mut inner = if forward { f64::NEG_INFINITY } else { f64::INFINITY };
                for dof in &d_off[..nd] {
                    let (a0, a1, s) = if fixed0 { loc0 } else { axes[0].locate(base[0] + uo[0] + dof[0]) };
                    let (b0, b1, t) = axes[1].locate(base[1] + uo[1] + dof[1]);
                    let lo = vals[a0 * stride + b0] * (1.0 - t) + vals[a0 * stride + b1] * t;
                    let hi = vals[a1 * stride + b0] * (1.0 - t) + vals[a1 * stride + b1] * t;
                    let val = lo * (1.0 - s) + hi * s;
                    inner = if forward { inner.max(val) } else { inner.min(val) };
                }
                outer = if forward { outer.min(inner) } else { outer.max(inner) };
            }
            self.finish(k, outer)
        });
    }

    #[inline]
    fn finish(&self, k: usize, outer: f64) -> f64 {
        let target = self.target.get(k);
        let propagated = self.factor * outer;
        match self.formulation {
            Formulation::FrtDiscount => target.max(propagated),
            Formulation::BrtDiscount | Formulation::BrtNoDiscount => target.min(propagated),
            Formulation::CbvfDiscount => target.min(propagated.clamp(-self.value_cap, self.value_cap)),
        }
    }
}

const FAST_SAMPLES: usize = 64;

/// Cell lookup along one axis with a precomputed inverse spacing.
struct AxisLookup {
    min: f64,
    inv_h: f64,
    count: usize,
    periodic: bool,
}

impl AxisLookup {
    fn new(grid: &Grid, d: usize) -> Self {
        let a = grid.axis(d);
        AxisLookup { min: a.min, inv_h: 1.0 / grid.spacing(d), count: a.count, periodic: a.periodic }
    }

    #[inline]
    fn locate(&self, x: f64) -> (usize, usize, f64) {
        if self.periodic {
            let s = ((x - self.min) * self.inv_h).rem_euclid(self.count as f64);
            let f = s.floor();
            let i0 = (f as usize).min(self.count - 1);
            let i1 = if i0 + 1 == self.count { 0 } else { i0 + 1 };
            (i0, i1, s - f)
        } else {
            let s = ((x - self.min) * self.inv_h).clamp(0.0, (self.count - 1) as f64);
            let i0 = (s.floor() as usize).min(self.count - 2);
            (i0, i0 + 1, s - i0 as f64)
        }
    }
}

/// Applies one Bellman backup of the given formulation.
pub fn bellman_backup(
    v: &ScalarField,
    formulation: Formulation,
    system: &ControlAffineSystem,
    target: &ScalarField,
    params: &SolveParams,
    dt: f64,
) -> Result<ScalarField, SolveError> {
    BellmanOperator::new(formulation, system, target, params, dt)?.apply(v)
}

/// Iterates the Bellman backup from `v0`.
///
/// The contracting formulations stop when the a-posteriori bound on the
/// distance to the fixed point, `r rho / (1 - rho)` with `rho = e^{-gamma dt}`,
/// falls below the tolerance; they abort on divergence or on a residual
/// ratio above `rho + 0.05` after ten burn-in iterations. The other
/// formulations run a fixed budget of `min(max_iters, max_time / dt)`
/// iterations.
pub fn value_iterate(
    v0: &ScalarField,
    formulation: Formulation,
    system: &ControlAffineSystem,
    target: &ScalarField,
    params: &SolveParams,
) -> Result<SolveReport, SolveError> {
    check_fields(system, target, Some(v0))?;
    let grid: Arc<Grid> = target.grid().clone();
    let dt = params.dt_vi_for(system, &grid);
    let op = BellmanOperator::new(formulation, system, target, params, dt)?;
    let tol = params.tolerance_for(target);
    let rho = op.factor();
    let budget = if formulation.is_contraction() {
        params.max_iters
    } else {
        params.max_iters.min((params.max_time / dt).ceil() as usize)
    };
    let noise = 1e-12 * value_scale(target);

    let mut cur = v0.clone();
    let mut next = v0.clone();
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    for it in 1..=budget {
        op.apply_into(&cur, next.values_mut());
        let mut r: f64 = 0.0;
        for (k, (a, b)) in next.values().iter().zip(cur.values()).enumerate() {
            if !a.is_finite() {
                return Err(SolveError::NonFinite { iteration: it, index: k });
            }
            r = r.max((a - b).abs());
        }
        std::mem::swap(&mut cur, &mut next);
        history.push(r);
        if formulation.is_contraction() {
            let initial = history[0];
            if it > 1 && r > 10.0 * initial && r > noise {
                return Err(SolveError::Divergence { iteration: it, residual: r, initial });
            }
            if it > 10 {
                let prev = history[it - 2];
                if prev > noise * 1e3 && r > noise * 1e3 && r / prev > rho + 0.05 {
                    return Err(SolveError::ContractionViolated { iteration: it, ratio: r / prev, bound: rho + 0.05 });
                }
            }
            if r <= tol && r * rho / (1.0 - rho) <= tol {
                converged = true;
                break;
            }
        }
    }
    if !formulation.is_contraction() {
        converged = history.last().is_some_and(|&r| r <= tol * dt);
    }
    Ok(SolveReport {
        value: cur,
        iterations: history.len(),
        residual_history: history,
        converged,
        cfl_dt_used: dt,
        tolerance: tol,
        gamma_vs_lipschitz: gamma_check(system, &grid, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::targets::{build_target, AnalyticFn, TargetSpec};
    use crate::testutil::still;
    use proptest::prelude::*;

    fn line(min: f64, max: f64, n: usize) -> Arc<Grid> {
        Grid::shared(vec![Axis::new(min, max, n)]).unwrap()
    }

    fn frt_exact(x: f64) -> f64 {
        if x <= 5.0 / 3.0 { 2.0 - x } else { 4.0 / (27.0 * (x - 1.0).powi(2)) }
    }

    fn integrator() -> ControlAffineSystem {
        ControlAffineSystem::by_name("integrator1d").unwrap()
    }

    #[test]
    fn constant_field_is_fixed_under_zero_flow() {
        let g = line(0.0, 1.0, 11);
        let c = ScalarField::constant(g, 0.7);
        let out = bellman_backup(&c, Formulation::FrtDiscount, &still(1), &c, &SolveParams::default(), 0.01).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn zero_value_with_nonpositive_target() {
        let g = line(0.0, 6.0, 61);
        let target = ScalarField::from_fn(g.clone(), |x| -x[0]);
        let v = ScalarField::constant(g, 0.0);
        let out = bellman_backup(&v, Formulation::FrtDiscount, &integrator(), &target, &SolveParams::default(), 0.01)
            .unwrap();
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn foot_point_guard() {
        let g = line(0.0, 6.0, 601);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let err = bellman_backup(&t, Formulation::FrtDiscount, &integrator(), &t, &SolveParams::default(), 0.01);
        assert!(matches!(err, Err(SolveError::FootPoint { axis: 0, .. })));
        assert!(bellman_backup(&t, Formulation::FrtDiscount, &integrator(), &t, &SolveParams::default(), 0.004).is_ok());
    }

    #[test]
    fn rejects_bad_params() {
        let g = line(0.0, 6.0, 61);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let p = SolveParams { gamma: 0.0, ..Default::default() };
        assert!(matches!(levelset_solve_frt(&integrator(), &t, &p), Err(SolveError::InvalidParams(_))));
        assert!(value_iterate(&t, Formulation::BrtNoDiscount, &integrator(), &t, &SolveParams { max_iters: 5, ..p })
            .is_ok());
        let di = ControlAffineSystem::by_name("double_integrator").unwrap();
        assert!(matches!(levelset_solve_frt(&di, &t, &SolveParams::default()), Err(SolveError::Dimension { .. })));
    }

    #[test]
    fn levelset_matches_closed_form_on_coarse_grid() {
        let g = line(0.0, 6.0, 301);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let rep = levelset_solve_frt(&integrator(), &t, &SolveParams::with_gamma(2.0)).unwrap();
        assert!(rep.converged);
        let err = (0..g.len()).map(|k| (rep.value.get(k) - frt_exact(g.coord(0, k))).abs()).fold(0.0, f64::max);
        assert!(err <= 3.0 * g.spacing(0), "{err}");
        assert!(rep.gamma_vs_lipschitz.satisfied);
    }

    #[test]
    fn negative_constant_target_gives_zero() {
        let g = line(0.0, 6.0, 121);
        let t = ScalarField::constant(g.clone(), -1.0);
        let rep = levelset_solve_frt(&integrator(), &t, &SolveParams::with_gamma(2.0)).unwrap();
        assert!(rep.value.values().iter().all(|v| v.abs() <= 3.0 * g.spacing(0)));
        assert!(rep.value.values().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn valid_barrier_is_its_own_value() {
        let g = line(-2.0, 2.0, 201);
        let h = build_target(
            &TargetSpec::analytic(AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0] }, -10.0, 10.0),
            &g,
        )
        .unwrap();
        let sys = ControlAffineSystem::by_name("single_integrator1d").unwrap();
        let rep = levelset_solve_frt(&sys, &h, &SolveParams::with_gamma(4.0)).unwrap();
        let err = (0..g.len()).map(|k| (rep.value.get(k) - h.get(k).max(0.0)).abs()).fold(0.0, f64::max);
        assert!(err <= 3.0 * g.spacing(0), "{err}");
    }

    #[test]
    fn value_iteration_agrees_with_levelset() {
        let g = line(0.0, 6.0, 301);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let params = SolveParams { dt_vi: Some(0.005), ..SolveParams::with_gamma(2.0) };
        let vi = value_iterate(&t, Formulation::FrtDiscount, &integrator(), &t, &params).unwrap();
        assert!(vi.converged);
        let far = ScalarField::constant(g.clone(), 10.0);
        let vi_far = value_iterate(&far, Formulation::FrtDiscount, &integrator(), &t, &params).unwrap();
        let ls = levelset_solve_frt(&integrator(), &t, &params).unwrap();
        let dx = g.spacing(0);
        assert!(vi.value.linf_distance(&ls.value).unwrap() <= 3.0 * dx);
        assert!(vi.value.linf_distance(&vi_far.value).unwrap() <= 3.0 * dx);
    }

    #[test]
    fn viability_kernel_of_ramp() {
        let g = line(0.0, 6.0, 301);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let params = SolveParams { tol_steady: Some(1e-6), ..SolveParams::with_gamma(2.0) };
        let rep = value_iterate(&t, Formulation::BrtDiscount, &integrator(), &t, &params).unwrap();
        assert!(rep.converged);
        let last_nonneg = (0..g.len()).filter(|&k| rep.value.get(k) >= 0.0).max().unwrap();
        assert!((g.coord(0, last_nonneg) - 1.0).abs() <= 2.0 * g.spacing(0));
    }

    #[test]
    fn barrier_value_is_capped() {
        let g = line(0.0, 6.0, 61);
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let params = SolveParams { value_cap: Some(5.0), max_time: 10.0, ..SolveParams::with_gamma(2.0) };
        let rep = value_iterate(&t, Formulation::CbvfDiscount, &integrator(), &t, &params).unwrap();
        assert!(rep.value.values().iter().all(|v| v.abs() <= 5.0));
        assert!(rep.value.values().iter().any(|&v| v == -5.0));
    }

    fn smooth_random(g: &Arc<Grid>, seed: u64) -> ScalarField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ScalarField::new(g.clone(), (0..g.len()).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn backup_contracts(seed in 0u64..10_000, f in 0usize..2) {
            let g = line(0.0, 6.0, 121);
            let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
            let form = [Formulation::FrtDiscount, Formulation::BrtDiscount][f];
            let op = BellmanOperator::new(form, &integrator(), &t, &SolveParams::with_gamma(2.0), 0.01).unwrap();
            let (a, b) = (smooth_random(&g, seed), smooth_random(&g, seed + 1));
            let lhs = op.apply(&a).unwrap().linf_distance(&op.apply(&b).unwrap()).unwrap();
            let rhs = op.factor() * a.linf_distance(&b).unwrap() + 1e-9 + 1e-6;
            prop_assert!(lhs <= rhs, "{} > {}", lhs, rhs);
        }

        #[test]
        fn backup_is_monotone(seed in 0u64..10_000, f in 0usize..4, shift in 0.0..1.0f64) {
            let g = line(0.0, 6.0, 121);
            let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
            let op = BellmanOperator::new(Formulation::ALL[f], &integrator(), &t, &SolveParams::with_gamma(2.0), 0.01)
                .unwrap();
            let a = smooth_random(&g, seed);
            let bump = smooth_random(&g, seed + 7).map(|v| v.abs() + shift);
            let b = a.with_values(a.values().iter().zip(bump.values()).map(|(x, y)| x + y).collect()).unwrap();
            let (ba, bb) = (op.apply(&a).unwrap(), op.apply(&b).unwrap());
            prop_assert!(ba.values().iter().zip(bb.values()).all(|(x, y)| x <= &(y + 1e-12)));
        }
    }

    #[test]
    fn planar_fast_path_matches_generic_backup() {
        let grid = Grid::shared(vec![Axis::periodic(0.0, 2.0 * std::f64::consts::PI, 40), Axis::new(-1.3, 1.3, 31)]).unwrap();
        let sys = ControlAffineSystem::by_name("pendulum").unwrap();
        let target = ScalarField::from_fn(grid.clone(), |x| 0.8 - (x[0] - 3.0).abs() - x[1].abs());
        let v = ScalarField::from_fn(grid.clone(), |x| (2.0 * x[0]).sin() * x[1] + 0.3 * x[1] * x[1]);
        for f in Formulation::ALL {
            let op = BellmanOperator::new(f, &sys, &target, &SolveParams::with_gamma(1.5), 0.02).unwrap();
            let (mut fast, mut slow) = (vec![0.0; grid.len()], vec![0.0; grid.len()]);
            op.apply_into_2d(&v, &mut fast);
            op.apply_into_nd(&v, &mut slow);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12, "{}: {a} vs {b}", f.name());
            }
        }
    }

}
