//! Robust min-norm safety filter for scalar-input systems, reference
//! controllers and closed-loop simulation under worst-case disturbance.

use std::f64::consts::PI;

use thiserror::Error;

use crate::dynamics::{ControlAffineSystem, BOX_TOLERANCE};
use crate::grid::{ScalarField, MAX_DIM};
use crate::par;
use crate::targets::{BarrierFunction, Shape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("the filter needs exactly one control channel, system has {0}")]
    MultiChannel(usize),
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("reference control {0} lies outside the control box")]
    ReferenceOutOfBox(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("empty trajectory")]
    Empty,
}

/// Barrier function, decay rate and system of a safety filter. Infeasible
/// states fall back to the best-effort box endpoint.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub h: BarrierFunction,
    pub gamma: f64,
    pub system: ControlAffineSystem,
}

impl FilterSpec {
    pub fn new(h: BarrierFunction, gamma: f64, system: ControlAffineSystem) -> Result<Self, SimError> {
        if !(gamma > 0.0) {
            return Err(SimError::BadGamma(gamma));
        }
        if system.control_dim() != 1 {
            return Err(SimError::MultiChannel(system.control_dim()));
        }
        if h.dim() != system.state_dim() {
            return Err(SimError::Dimension(format!("h has dimension {}, system {}", h.dim(), system.state_dim())));
        }
        Ok(FilterSpec { h, gamma, system })
    }

    /// Worst-case constraint as `a + b u`.
    pub fn constraint(&self, x: &[f64]) -> (f64, f64) {
        let n = self.system.state_dim();
        let mut g = [0.0; MAX_DIM];
        self.h.gradient(x, &mut g);
        let g = &g[..n];
        let mut col = [0.0; MAX_DIM];
        self.system.drift(x, &mut col);
        let mut a = dot(g, &col[..n]) + self.gamma * self.h.value(x);
        let dbox = self.system.disturbance_box();
        for k in 0..self.system.disturbance_dim() {
            self.system.disturbance_column(x, k, &mut col);
            let gd = dot(g, &col[..n]);
            a += gd * dbox.mid(k) - gd.abs() * dbox.half(k);
        }
        self.system.control_column(x, 0, &mut col);
        (a, dot(g, &col[..n]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub u: f64,
    pub feasible: bool,
    pub constraint_lhs: f64,
}

/// Projects `u_ref` onto `{u in U : a + b u >= 0}`.
pub fn filter_control(spec: &FilterSpec, x: &[f64], u_ref: f64) -> Result<FilterOutput, SimError> {
    let (lo, hi) = (spec.system.control_box().lower()[0], spec.system.control_box().upper()[0]);
    if !(u_ref >= lo - BOX_TOLERANCE && u_ref <= hi + BOX_TOLERANCE) {
        return Err(SimError::ReferenceOutOfBox(u_ref));
    }
    let (a, b) = spec.constraint(x);
    Ok(project(a, b, lo, hi, u_ref.clamp(lo, hi)))
}

fn project(a: f64, b: f64, lo: f64, hi: f64, u_ref: f64) -> FilterOutput {
    let (flo, fhi) = if b > 0.0 {
        ((-a / b).max(lo), hi)
    } else if b < 0.0 {
        (lo, (-a / b).min(hi))
    } else if a >= 0.0 {
        (lo, hi)
    } else {
        (1.0, 0.0)
    };
    if flo <= fhi {
        let u = u_ref.clamp(flo, fhi);
        FilterOutput { u, feasible: true, constraint_lhs: a + b * u }
    } else {
        let u = if a + b * hi > a + b * lo { hi } else { lo };
        FilterOutput { u, feasible: false, constraint_lhs: a + b * u }
    }
}

/// Bound of the pendulum control box.
pub fn pendulum_u_max() -> f64 {
    (PI / 3.0).sin()
}

/// Clipped feedback-linearizing tracker of `target_angle`.
pub fn pendulum_reference(x: &[f64], target_angle: f64, k1: f64, k2: f64) -> f64 {
    let u_max = pendulum_u_max();
    (x[0].sin() - k1 * (x[0] - target_angle) - k2 * x[1]).clamp(-u_max, u_max)
}

/// Reference schedule that switches its target angle at `switch_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumSchedule {
    pub first_target: f64,
    pub second_target: f64,
    pub switch_time: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for PendulumSchedule {
    fn default() -> Self {
        PendulumSchedule { first_target: -0.2, second_target: PI - 0.6, switch_time: 8.0, k1: 3.0, k2: 3.0 }
    }
}

impl PendulumSchedule {
    pub fn control(&self, t: f64, x: &[f64]) -> f64 {
        let target = if t < self.switch_time { self.first_target } else { self.second_target };
        pendulum_reference(x, target, self.k1, self.k2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Reference,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// Disturbance held at the box center.
    None,
    /// Minimizer of `grad h . f` for the filter's `h`, refreshed every
    /// control step.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_final: f64,
    pub dt_ctrl: f64,
    pub dt_integrator: f64,
    /// Per-axis domain; leaving it by more than 10% of its size aborts.
    pub bounds: Vec<(f64, f64)>,
}

impl SimOptions {
    pub fn pendulum(t_final: f64, bounds: Vec<(f64, f64)>) -> Self {
        SimOptions { t_final, dt_ctrl: 0.01, dt_integrator: 0.0025, bounds }
    }

    fn steps(&self) -> Result<(usize, usize), SimError> {
        if !(self.dt_ctrl > 0.0 && self.dt_integrator > 0.0 && self.t_final > 0.0) {
            return Err(SimError::Timing("times must be positive".into()));
        }
        if self.dt_integrator > self.dt_ctrl {
            return Err(SimError::Timing("integrator step exceeds control step".into()));
        }
        let n = (self.t_final / self.dt_ctrl).round();
        if (n * self.dt_ctrl - self.t_final).abs() > 1e-9 {
            return Err(SimError::Timing(format!("{} does not divide {}", self.dt_ctrl, self.t_final)));
        }
        let sub = (self.dt_ctrl / self.dt_integrator - 1e-9).ceil().max(1.0);
        Ok((n as usize, sub as usize))
    }
}

/// Closed-loop samples at the control rate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub h_values: Vec<f64>,
    pub constraint_lhs: Vec<f64>,
    pub filter_feasible: Vec<bool>,
    /// Set when the state left the enlarged domain.
    pub aborted: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `t, x1.., u, d, h, lhs, feasible`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",u,d,h,lhs,feasible\n");
        for k in 0..self.len() {
            out.push_str(&format!("{}", self.times[k]));
            for v in &self.states[k] {
                out.push_str(&format!(",{v}"));
            }
            let first = |v: &Vec<f64>| v.first().copied().unwrap_or(0.0);
            out.push_str(&format!(
                ",{},{},{},{},{}\n",
                first(&self.controls[k]),
                first(&self.disturbances[k]),
                self.h_values[k],
                self.constraint_lhs[k],
                u8::from(self.filter_feasible[k])
            ));
        }
        out
    }
}

/// Zero-order-hold closed loop with RK4 sub-steps. The filter's `h` is
/// monitored in every mode; under `Policy::Reference` the recorded
/// feasibility says whether the filter could have acted.
pub fn simulate(
    spec: &FilterSpec,
    policy: Policy,
    disturbance: DisturbanceMode,
    reference: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    x0: &[f64],
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let sys = &spec.system;
    let n = sys.state_dim();
    if x0.len() != n || opts.bounds.len() != n {
        return Err(SimError::Dimension(format!("state dimension is {n}")));
    }
    let (steps, sub) = opts.steps()?;
    let h_sub = opts.dt_ctrl / sub as f64;
    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    let mut grad = [0.0; MAX_DIM];
    for k in 0..=steps {
        let t = k as f64 * opts.dt_ctrl;
        let u_ref = reference(t, &x);
        let filtered = filter_control(spec, &x, u_ref)?;
        let u = match policy {
            Policy::Filtered => filtered.u,
            Policy::Reference => u_ref,
        };
        let d = match disturbance {
            DisturbanceMode::None => sys.disturbance_box().midpoint(),
            DisturbanceMode::WorstCase => {
                spec.h.gradient(&x, &mut grad);
                sys.worst_case_disturbance(&x, &grad[..n])
            }
        };
        let (a, b) = spec.constraint(&x);
        traj.times.push(t);
        traj.h_values.push(spec.h.value(&x));
        traj.constraint_lhs.push(a + b * u);
        traj.filter_feasible.push(filtered.feasible);
        traj.states.push(x.clone());
        traj.controls.push(vec![u]);
        traj.disturbances.push(d.clone());
        if k == steps {
            break;
        }
        for _ in 0..sub {
            rk4_step(sys, &mut x, &[u], &d, h_sub);
        }
        if out_of_bounds(&x, &opts.bounds) {
            traj.aborted = true;
            break;
        }
    }
    Ok(traj)
}

/// Runs `simulate` for every initial state, in parallel when enabled.
pub fn simulate_batch(
    spec: &FilterSpec,
    policy: Policy,
    disturbance: DisturbanceMode,
    reference: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    x0s: &[Vec<f64>],
    opts: &SimOptions,
) -> Result<Vec<Trajectory>, SimError> {
    par::map(x0s, |x0| simulate(spec, policy, disturbance, reference, x0, opts)).into_iter().collect()
}

fn rk4_step(sys: &ControlAffineSystem, x: &mut [f64], u: &[f64], d: &[f64], h: f64) {
    let n = x.len();
    let mut k = [[0.0; MAX_DIM]; 4];
    let mut tmp = [0.0; MAX_DIM];
    sys.flow_into(x, u, d, &mut k[0]);
    for (stage, scale) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
        for i in 0..n {
            tmp[i] = x[i] + scale * h * k[stage - 1][i];
        }
        let (_, rest) = k.split_at_mut(stage);
        sys.flow_into(&tmp[..n], u, d, &mut rest[0]);
    }
    for i in 0..n {
        x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

fn out_of_bounds(x: &[f64], bounds: &[(f64, f64)]) -> bool {
    x.iter().zip(bounds).any(|(&v, &(lo, hi))| {
        let slack = 0.1 * (hi - lo);
        !(v >= lo - slack && v <= hi + slack)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    pub min_h: f64,
    pub exit_time: Option<f64>,
    pub feasible_fraction: f64,
    pub min_constraint_lhs: f64,
}

/// Summary of a trajectory against the safe set `h_s` and constraint `x_spec`.
pub fn safety_audit(traj: &Trajectory, h_s: &BarrierFunction, x_spec: &Shape) -> Result<AuditReport, SimError> {
    if traj.is_empty() {
        return Err(SimError::Empty);
    }
    let min_h = traj.states.iter().map(|x| h_s.value(x)).fold(f64::INFINITY, f64::min);
    let exit_time = traj.states.iter().zip(&traj.times).find(|(x, _)| !x_spec.contains(x)).map(|(_, &t)| t);
    let exit_time = if exit_time.is_none() && traj.aborted { traj.times.last().copied() } else { exit_time };
    let feasible_fraction = traj.filter_feasible.iter().filter(|&&f| f).count() as f64 / traj.len() as f64;
    let min_constraint_lhs = traj.constraint_lhs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AuditReport { min_h, exit_time, feasible_fraction, min_constraint_lhs })
}

/// Lipschitz constant of the multilinear interpolant of `h`: per node, the
/// norm of the largest one-sided difference along each axis, maximized
/// over nodes. Cell-corner gradients bound the interpolant's slope, so this
/// is tight where central differences would underestimate at kinks.
pub fn field_lipschitz(h: &ScalarField) -> f64 {
    let g = h.grid();
    (0..g.len())
        .map(|k| {
            let idx = g.unravel(k);
            (0..g.ndim())
                .map(|d| {
                    let (l, r) = h.one_sided(k, idx[d], d);
                    l.abs().max(r.abs()).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Grid};
    use crate::targets::AnalyticFn;
    use proptest::prelude::*;

    fn pendulum_spec(h: BarrierFunction) -> FilterSpec {
        FilterSpec::new(h, 5.0, ControlAffineSystem::by_name("pendulum").unwrap()).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project(0.3, 0.0, -1.0, 1.0, 0.2), FilterOutput { u: 0.2, feasible: true, constraint_lhs: 0.3 });
        let out = project(-0.5, 1.0, -1.0, 1.0, 0.0);
        assert!(out.feasible && (out.u - 0.5).abs() < 1e-15 && out.constraint_lhs.abs() < 1e-15);
        let out = project(-0.1, 0.0, -1.0, 1.0, 0.4);
        assert_eq!((out.u, out.feasible), (-1.0, false));
        let out = project(-3.0, -1.0, -1.0, 1.0, 0.4);
        assert_eq!((out.u, out.feasible, out.constraint_lhs), (-1.0, false, -2.0));
        let out = project(0.5, -1.0, -1.0, 1.0, 0.9);
        assert_eq!((out.u, out.feasible), (0.5, true));
    }

    #[test]
    fn filter_rejects_bad_inputs() {
        let h = BarrierFunction::analytic(AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0, 0.0] });
        let spec = pendulum_spec(h.clone());
        assert_eq!(filter_control(&spec, &[4.0, 0.0], 2.0), Err(SimError::ReferenceOutOfBox(2.0)));
        assert!(FilterSpec::new(h.clone(), 0.0, ControlAffineSystem::by_name("pendulum").unwrap()).is_err());
        assert!(FilterSpec::new(h, 1.0, ControlAffineSystem::by_name("integrator1d").unwrap()).is_err());
    }

    #[test]
    fn constraint_includes_worst_disturbance() {
        // h = x2: grad h . f = -sin x1 + u + d cos x1, worst d = -0.1 |cos x1|.
        let h = BarrierFunction::analytic(AnalyticFn::Affine { offset: 0.0, coeffs: vec![0.0, 1.0] });
        let spec = pendulum_spec(h);
        let x = [PI, 0.2];
        let (a, b) = spec.constraint(&x);
        assert!((a - (-PI.sin() - 0.1 + 5.0 * 0.2)).abs() < 1e-12);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn reference_examples() {
        let u_max = pendulum_u_max();
        assert!((pendulum_reference(&[1.0, 0.0], 1.0, 3.0, 3.0) - 1.0f64.sin().min(u_max)).abs() < 1e-15);
        assert!(pendulum_reference(&[PI, 0.0], PI, 3.0, 3.0).abs() < 1e-15);
        assert_eq!(pendulum_reference(&[4.0, 0.4], -0.2, 3.0, 3.0), -u_max);
    }

    #[test]
    fn still_system_stays_put() {
        let sys = crate::testutil::still_with_control(2);
        let h = BarrierFunction::analytic(AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0, 0.0] });
        let spec = FilterSpec::new(h.clone(), 1.0, sys).unwrap();
        let opts = SimOptions { t_final: 1.0, dt_ctrl: 0.1, dt_integrator: 0.03, bounds: vec![(-1.0, 1.0); 2] };
        let traj = simulate(&spec, Policy::Filtered, DisturbanceMode::WorstCase, &|_, _| 0.5, &[0.2, 0.1], &opts).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.states.iter().all(|x| x == &vec![0.2, 0.1]));
        assert!((traj.times[10] - 1.0).abs() < 1e-12);
        let audit = safety_audit(&traj, &h, &Shape::AxisBox { lower: vec![-1.0; 2], upper: vec![1.0; 2] }).unwrap();
        assert_eq!(audit.exit_time, None);
        assert_eq!(audit.min_h, h.value(&[0.2, 0.1]));
        assert_eq!(audit.feasible_fraction, 1.0);
        let bad = SimOptions { t_final: 1.05, dt_ctrl: 0.1, ..opts.clone() };
        assert!(simulate(&spec, Policy::Filtered, DisturbanceMode::None, &|_, _| 0.0, &[0.0, 0.0], &bad).is_err());
        assert_eq!(safety_audit(&Trajectory::default(), &h, &Shape::PendulumX), Err(SimError::Empty));
    }

    #[test]
    fn rk4_matches_exponential() {
        let sys = ControlAffineSystem::by_name("integrator1d").unwrap();
        let mut x = [1.0];
        for _ in 0..100 {
            rk4_step(&sys, &mut x, &[0.0], &[], 0.01);
        }
        assert!((x[0] - 1.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn leaving_domain_aborts() {
        let sys = ControlAffineSystem::by_name("integrator1d").unwrap();
        let h = BarrierFunction::analytic(AnalyticFn::Affine { offset: 1.0, coeffs: vec![0.0] });
        let spec = FilterSpec::new(h, 1.0, sys).unwrap();
        let opts = SimOptions { t_final: 10.0, dt_ctrl: 0.1, dt_integrator: 0.1, bounds: vec![(0.0, 2.0)] };
        let traj = simulate(&spec, Policy::Reference, DisturbanceMode::None, &|_, _| 0.0, &[1.0], &opts).unwrap();
        assert!(traj.aborted);
        assert!(traj.len() < 101);
        let audit = safety_audit(&traj, &spec.h, &Shape::Interval { a: 0.0, b: 2.0 }).unwrap();
        assert!(audit.exit_time.is_some());
    }

    #[test]
    fn lipschitz_of_linear_field() {
        let g = Grid::shared(vec![Axis::new(0.0, 1.0, 11), Axis::new(0.0, 1.0, 11)]).unwrap();
        let f = ScalarField::from_fn(g, |x| 3.0 * x[0] - 4.0 * x[1]);
        assert!((field_lipschitz(&f) - 5.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn projection_is_admissible_and_optimal(a in -2.0..2.0f64, b in -2.0..2.0f64, r in -1.0..=1.0f64) {
            let out = project(a, b, -1.0, 1.0, r);
            prop_assert!((-1.0..=1.0).contains(&out.u));
            if out.feasible {
                prop_assert!(out.constraint_lhs >= -1e-9);
                for i in 0..=100 {
                    let w = -1.0 + 0.02 * i as f64;
                    if a + b * w >= 0.0 {
                        prop_assert!((out.u - r).abs() <= (w - r).abs() + 1e-12);
                    }
                }
            } else {
                prop_assert!((0..=100).all(|i| a + b * (-1.0 + 0.02 * i as f64) < 1e-12));
            }
        }
    }
}
