//! Control-affine systems with box-shaped input sets.
//!
//! `f(x, u, d) = f0(x) + G_u(x) u + G_d(x) d`. Because both input sets are
//! boxes and the dynamics are affine in the inputs, the max-min Hamiltonian
//! and its extremizers have closed forms.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Grid, MAX_DIM};

/// Slack allowed when checking that an input lies in its box.
pub const BOX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("box bounds have different lengths ({0} vs {1})")]
    BoxLength(usize, usize),
    #[error("box channel {channel}: lower {lower} exceeds upper {upper}")]
    BoxOrder { channel: usize, lower: f64, upper: f64 },
    #[error("{which} channel {channel} value {value} lies outside [{lower}, {upper}]")]
    InputOutOfBox { which: &'static str, channel: usize, value: f64, lower: f64, upper: f64 },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("unknown system `{0}` (expected integrator1d, double_integrator, pendulum or single_integrator1d)")]
    UnknownSystem(String),
    #[error("dynamics are not finite at {0:?}")]
    NonFinite(Vec<f64>),
}

/// Axis-aligned box `[lower, upper]` of input values, one interval per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DynamicsError> {
        if lower.len() != upper.len() {
            return Err(DynamicsError::BoxLength(lower.len(), upper.len()));
        }
        for (k, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) || !l.is_finite() || !u.is_finite() {
                return Err(DynamicsError::BoxOrder { channel: k, lower: l, upper: u });
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// Symmetric box `[-r, r]^m`.
    pub fn symmetric(radius: f64, dim: usize) -> Self {
        BoxSet { lower: vec![-radius.abs(); dim], upper: vec![radius.abs(); dim] }
    }

    pub fn singleton(point: Vec<f64>) -> Self {
        BoxSet { lower: point.clone(), upper: point }
    }

    /// Zero-dimensional box for systems without that input channel.
    pub fn empty() -> Self {
        BoxSet { lower: Vec::new(), upper: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn mid(&self, k: usize) -> f64 {
        0.5 * (self.lower[k] + self.upper[k])
    }

    pub fn half(&self, k: usize) -> f64 {
        0.5 * (self.upper[k] - self.lower[k])
    }

    pub fn is_singleton(&self) -> bool {
        self.lower == self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.mid(k)).collect()
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        v.len() == self.dim()
            && v.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol)
    }

    pub fn clamp(&self, v: &mut [f64]) {
        for (k, x) in v.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }

    /// `n` evenly spaced values on channel `k`, endpoints included.
    pub fn samples(&self, k: usize, n: usize) -> Vec<f64> {
        if n <= 1 || self.lower[k] == self.upper[k] {
            return vec![self.mid(k)];
        }
        (0..n)
            .map(|i| self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// All `2^dim` vertices.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|bits| (0..m).map(|k| if bits >> k & 1 == 1 { self.upper[k] } else { self.lower[k] }).collect())
            .collect()
    }

    fn check(&self, which: &'static str, v: &[f64]) -> Result<(), DynamicsError> {
        if v.len() != self.dim() {
            return Err(DynamicsError::Dimension { what: which, expected: self.dim(), got: v.len() });
        }
        for (k, &x) in v.iter().enumerate() {
            if !(x >= self.lower[k] - BOX_TOLERANCE && x <= self.upper[k] + BOX_TOLERANCE) {
                return Err(DynamicsError::InputOutOfBox {
                    which,
                    channel: k,
                    value: x,
                    lower: self.lower[k],
                    upper: self.upper[k],
                });
            }
        }
        Ok(())
    }
}

/// State-dependent terms of a control-affine vector field. Implementations
/// write into `out[..state_dim]`.
pub trait AffineModel: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn control_column(&self, x: &[f64], j: usize, out: &mut [f64]);
    fn disturbance_column(&self, x: &[f64], k: usize, out: &mut [f64]);
}

/// The built-in example systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// `x' = x + u`
    Integrator1D,
    /// `p' = v, v' = u`
    DoubleIntegrator,
    /// `x1' = x2, x2' = -sin x1 + u + cos(x1) d`
    Pendulum,
    /// `x' = u`
    SingleIntegrator1D,
}

impl Builtin {
    pub const ALL: [Builtin; 4] =
        [Builtin::Integrator1D, Builtin::DoubleIntegrator, Builtin::Pendulum, Builtin::SingleIntegrator1D];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Integrator1D => "integrator1d",
            Builtin::DoubleIntegrator => "double_integrator",
            Builtin::Pendulum => "pendulum",
            Builtin::SingleIntegrator1D => "single_integrator1d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DynamicsError> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| DynamicsError::UnknownSystem(name.to_string()))
    }

    /// Default control and disturbance boxes.
    pub fn default_boxes(self) -> (BoxSet, BoxSet) {
        match self {
            Builtin::Pendulum => {
                let a = (std::f64::consts::PI / 3.0).sin();
                (BoxSet::symmetric(a, 1), BoxSet::symmetric(0.1, 1))
            }
            _ => (BoxSet::symmetric(1.0, 1), BoxSet::empty()),
        }
    }

    pub fn system(self) -> ControlAffineSystem {
        let (u, d) = self.default_boxes();
        ControlAffineSystem::new(self.name(), Arc::new(self), u, d).expect("built-in boxes match dimensions")
    }
}

impl AffineModel for Builtin {
    fn state_dim(&self) -> usize {
        match self {
            Builtin::Integrator1D | Builtin::SingleIntegrator1D => 1,
            Builtin::DoubleIntegrator | Builtin::Pendulum => 2,
        }
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn disturbance_dim(&self) -> usize {
        match self {
            Builtin::Pendulum => 1,
            _ => 0,
        }
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Builtin::Integrator1D => out[0] = x[0],
            Builtin::SingleIntegrator1D => out[0] = 0.0,
            Builtin::DoubleIntegrator => {
                out[0] = x[1];
                out[1] = 0.0;
            }
            Builtin::Pendulum => {
                out[0] = x[1];
                out[1] = -x[0].sin();
            }
        }
    }

    fn control_column(&self, _x: &[f64], _j: usize, out: &mut [f64]) {
        match self {
            Builtin::Integrator1D | Builtin::SingleIntegrator1D => out[0] = 1.0,
            Builtin::DoubleIntegrator | Builtin::Pendulum => {
                out[0] = 0.0;
                out[1] = 1.0;
            }
        }
    }

    fn disturbance_column(&self, x: &[f64], _k: usize, out: &mut [f64]) {
        if let Builtin::Pendulum = self {
            out[0] = 0.0;
            out[1] = x[0].cos();
        }
    }
}

/// Result of the closed-form max-min Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    pub value: f64,
    pub u_star: Vec<f64>,
    pub d_star: Vec<f64>,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 { 1.0 } else { -1.0 }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A control-affine system together with its input boxes.
#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    name: String,
    model: Arc<dyn AffineModel>,
    u: BoxSet,
    d: BoxSet,
}

impl ControlAffineSystem {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn AffineModel>,
        u: BoxSet,
        d: BoxSet,
    ) -> Result<Self, DynamicsError> {
        if u.dim() != model.control_dim() {
            return Err(DynamicsError::Dimension { what: "control box", expected: model.control_dim(), got: u.dim() });
        }
        if d.dim() != model.disturbance_dim() {
            return Err(DynamicsError::Dimension {
                what: "disturbance box",
                expected: model.disturbance_dim(),
                got: d.dim(),
            });
        }
        if model.state_dim() == 0 || model.state_dim() > MAX_DIM {
            return Err(DynamicsError::Dimension { what: "state", expected: MAX_DIM, got: model.state_dim() });
        }
        Ok(ControlAffineSystem { name: name.into(), model, u, d })
    }

    /// Built-in system by its config name.
    pub fn by_name(name: &str) -> Result<Self, DynamicsError> {
        Builtin::from_name(name).map(Builtin::system)
    }

    /// Same system with replaced input boxes.
    pub fn with_boxes(&self, u: BoxSet, d: BoxSet) -> Result<Self, DynamicsError> {
        ControlAffineSystem::new(self.name.clone(), self.model.clone(), u, d)
    }

    /// Verifies the vector field is finite at every grid node for every
    /// vertex of `U x D`.
    pub fn check_finite_on(&self, grid: &Grid) -> Result<(), DynamicsError> {
        if grid.ndim() != self.state_dim() {
            return Err(DynamicsError::Dimension { what: "grid", expected: self.state_dim(), got: grid.ndim() });
        }
        let n = self.state_dim();
        let (uv, dv) = (self.u.vertices(), self.d.vertices());
        let mut x = [0.0; MAX_DIM];
        let mut f = [0.0; MAX_DIM];
        for k in 0..grid.len() {
            grid.point_into(k, &mut x);
            for u in &uv {
                for d in &dv {
                    self.flow_into(&x[..n], u, d, &mut f);
                    if f[..n].iter().any(|v| !v.is_finite()) {
                        return Err(DynamicsError::NonFinite(x[..n].to_vec()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.model.disturbance_dim()
    }

    pub fn control_box(&self) -> &BoxSet {
        &self.u
    }

    pub fn disturbance_box(&self) -> &BoxSet {
        &self.d
    }

    pub fn model(&self) -> &Arc<dyn AffineModel> {
        &self.model
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.model.drift(x, out)
    }

    pub fn control_column(&self, x: &[f64], j: usize, out: &mut [f64]) {
        self.model.control_column(x, j, out)
    }

    pub fn disturbance_column(&self, x: &[f64], k: usize, out: &mut [f64]) {
        self.model.disturbance_column(x, k, out)
    }

    /// `f(x, u, d)` written into `out[..n]` without input validation.
    #[inline]
    pub fn flow_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let mut col = [0.0; MAX_DIM];
        self.model.drift(x, out);
        for (j, &uj) in u.iter().enumerate() {
            self.model.control_column(x, j, &mut col);
            for i in 0..n {
                out[i] += col[i] * uj;
            }
        }
        for (k, &dk) in d.iter().enumerate() {
            self.model.disturbance_column(x, k, &mut col);
            for i in 0..n {
                out[i] += col[i] * dk;
            }
        }
    }

    pub fn flow(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.state_dim() {
            return Err(DynamicsError::Dimension { what: "state", expected: self.state_dim(), got: x.len() });
        }
        self.u.check("control", u)?;
        self.d.check("disturbance", d)?;
        let mut out = vec![0.0; self.state_dim()];
        self.flow_into(x, u, d, &mut out);
        Ok(out)
    }

    /// `max_u min_d p . f(x, u, d)` without building the extremizers.
    #[inline]
    pub fn hamiltonian_value(&self, x: &[f64], p: &[f64]) -> f64 {
        let mut col = [0.0; MAX_DIM];
        self.model.drift(x, &mut col);
        let n = self.state_dim();
        let mut value = dot(&col[..n], p);
        for j in 0..self.control_dim() {
            self.model.control_column(x, j, &mut col);
            let pg = dot(&col[..n], p);
            value += pg * self.u.mid(j) + pg.abs() * self.u.half(j);
        }
        for k in 0..self.disturbance_dim() {
            self.model.disturbance_column(x, k, &mut col);
            let pg = dot(&col[..n], p);
            value += pg * self.d.mid(k) - pg.abs() * self.d.half(k);
        }
        value
    }

    /// Closed-form max-min Hamiltonian over the input boxes. Ties in the
    /// extremizers (zero switching function) resolve to the `+` side.
    pub fn hamiltonian_maxmin(&self, x: &[f64], p: &[f64]) -> Hamiltonian {
        let n = self.state_dim();
        let mut col = [0.0; MAX_DIM];
        let u_star = (0..self.control_dim())
            .map(|j| {
                self.model.control_column(x, j, &mut col);
                self.u.mid(j) + sign(dot(&col[..n], p)) * self.u.half(j)
            })
            .collect();
        let d_star = self.worst_case_disturbance(x, p);
        Hamiltonian { value: self.hamiltonian_value(x, p), u_star, d_star }
    }

    /// `argmin_d p . G_d(x) d` over the disturbance box.
    pub fn worst_case_disturbance(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut col = [0.0; MAX_DIM];
        (0..self.disturbance_dim())
            .map(|k| {
                self.model.disturbance_column(x, k, &mut col);
                self.d.mid(k) - sign(dot(&col[..n], p)) * self.d.half(k)
            })
            .collect()
    }

    /// Sampled estimate of the state Lipschitz constant of `f` over the grid
    /// domain: random states, inputs and perturbations of relative size 1e-4.
    pub fn lipschitz_estimate(&self, grid: &Grid, n_samples: usize, seed: u64) -> f64 {
        let n = self.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        let mut fx = [0.0; MAX_DIM];
        let mut fy = [0.0; MAX_DIM];
        let mut u = vec![0.0; self.control_dim()];
        let mut d = vec![0.0; self.disturbance_dim()];
        let mut best: f64 = 0.0;
        for _ in 0..n_samples.max(100) {
            for i in 0..n {
                let a = grid.axis(i);
                x[i] = rng.gen_range(a.min..=a.max);
                y[i] = x[i] + 1e-4 * a.extent() * rng.gen_range(-1.0..=1.0);
            }
            for (j, v) in u.iter_mut().enumerate() {
                *v = self.u.lower[j] + (self.u.upper[j] - self.u.lower[j]) * rng.gen::<f64>();
            }
            for (k, v) in d.iter_mut().enumerate() {
                *v = self.d.lower[k] + (self.d.upper[k] - self.d.lower[k]) * rng.gen::<f64>();
            }
            self.flow_into(&x[..n], &u, &d, &mut fx);
            self.flow_into(&y[..n], &u, &d, &mut fy);
            let dx = (0..n).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
            if dx > 0.0 {
                let df = (0..n).map(|i| (fx[i] - fy[i]).powi(2)).sum::<f64>().sqrt();
                best = best.max(df / dx);
            }
        }
        best
    }

    /// Per-dimension bound `alpha_i = max |f_i|` over grid nodes and input
    /// box vertices, used as Lax-Friedrichs dissipation.
    pub fn lf_dissipation_bounds(&self, grid: &Grid) -> Vec<f64> {
        let n = self.state_dim();
        let (uv, dv) = (self.u.vertices(), self.d.vertices());
        let mut alpha = vec![0.0f64; n];
        let mut x = [0.0; MAX_DIM];
        let mut f = [0.0; MAX_DIM];
        for k in 0..grid.len() {
            grid.point_into(k, &mut x);
            for u in &uv {
                for d in &dv {
                    self.flow_into(&x[..n], u, d, &mut f);
                    for i in 0..n {
                        alpha[i] = alpha[i].max(f[i].abs());
                    }
                }
            }
        }
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pendulum() -> ControlAffineSystem {
        ControlAffineSystem::by_name("pendulum").unwrap()
    }

    fn di() -> ControlAffineSystem {
        ControlAffineSystem::by_name("double_integrator").unwrap()
    }

    /// Max over a uniform control sample of the min over a uniform
    /// disturbance sample.
    fn brute_maxmin(sys: &ControlAffineSystem, x: &[f64], p: &[f64], n: usize) -> f64 {
        let us = sys.control_box().samples(0, n);
        let ds: Vec<Vec<f64>> = if sys.disturbance_dim() == 0 {
            vec![vec![]]
        } else {
            sys.disturbance_box().samples(0, n).into_iter().map(|d| vec![d]).collect()
        };
        us.iter()
            .map(|&u| {
                ds.iter()
                    .map(|d| dot(&sys.flow(x, &[u], d).unwrap(), p))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn flow_examples() {
        assert_eq!(pendulum().flow(&[PI, 0.0], &[0.0], &[0.0]).unwrap()[1], -PI.sin());
        assert_eq!(di().flow(&[1.0, 2.0], &[-1.0], &[]).unwrap(), vec![2.0, -1.0]);
        let int = ControlAffineSystem::by_name("integrator1d").unwrap();
        assert_eq!(int.flow(&[3.0], &[1.0], &[]).unwrap(), vec![4.0]);
        assert!(matches!(int.flow(&[3.0], &[1.5], &[]), Err(DynamicsError::InputOutOfBox { .. })));
        assert!(matches!(pendulum().flow(&[0.0, 0.0], &[0.0], &[0.2]), Err(DynamicsError::InputOutOfBox { .. })));
        assert!(int.flow(&[0.0], &[1.0 + 1e-13], &[]).is_ok());
    }

    #[test]
    fn hamiltonian_examples() {
        let h = pendulum().hamiltonian_maxmin(&[PI, 0.0], &[0.0, 1.0]);
        let expected = (PI / 3.0).sin() - 0.1;
        assert!((h.value - expected).abs() < 1e-12, "{}", h.value);
        assert!((h.value - brute_maxmin(&pendulum(), &[PI, 0.0], &[0.0, 1.0], 2001)).abs() < 1e-9);
        let z = pendulum().hamiltonian_maxmin(&[1.0, 0.5], &[0.0, 0.0]);
        assert_eq!(z.value, 0.0);
        // sign(0) resolves to +1, so the extremizers sit at the + side.
        assert_eq!(z.u_star, vec![(PI / 3.0).sin()]);
        assert_eq!(z.d_star, vec![-0.1]);
        assert_eq!(di().hamiltonian_maxmin(&[0.0, 2.0], &[1.0, 0.0]).value, 2.0);
    }

    #[test]
    fn worst_case_disturbance_signs() {
        assert_eq!(pendulum().worst_case_disturbance(&[PI, 0.0], &[0.0, 1.0]), vec![0.1]);
        assert_eq!(pendulum().worst_case_disturbance(&[0.0, 0.0], &[0.0, 1.0]), vec![-0.1]);
        let single = pendulum().with_boxes(BoxSet::symmetric(1.0, 1), BoxSet::singleton(vec![0.05])).unwrap();
        assert_eq!(single.worst_case_disturbance(&[0.3, 0.0], &[0.0, -1.0]), vec![0.05]);
        assert!(di().worst_case_disturbance(&[0.0, 0.0], &[1.0, 1.0]).is_empty());
    }

    #[test]
    fn lipschitz_estimates() {
        let g1 = Grid::new(vec![Axis::new(0.0, 6.0, 601)]).unwrap();
        let int = ControlAffineSystem::by_name("integrator1d").unwrap();
        assert!((int.lipschitz_estimate(&g1, 1000, 7) - 1.0).abs() < 1e-6);
        let g2 = Grid::new(vec![Axis::new(-4.0, 4.0, 41), Axis::new(-3.0, 3.0, 31)]).unwrap();
        let l = di().lipschitz_estimate(&g2, 5000, 7);
        assert!(l <= 1.0 + 1e-9 && l > 0.95, "{l}");
        let gp = Grid::new(vec![Axis::new(0.5 * PI - 0.3, 2.0 * PI + 0.3, 41), Axis::new(-1.3, 1.3, 31)]).unwrap();
        let lp = pendulum().lipschitz_estimate(&gp, 5000, 7);
        assert!(lp <= 1.2 && lp > 0.9, "{lp}");
        assert_eq!(int.lipschitz_estimate(&g1, 1000, 3), int.lipschitz_estimate(&g1, 1000, 3));
    }

    #[test]
    fn dissipation_bounds() {
        let g2 = Grid::new(vec![Axis::new(-4.0, 4.0, 41), Axis::new(-3.0, 3.0, 31)]).unwrap();
        assert_eq!(di().lf_dissipation_bounds(&g2), vec![3.0, 1.0]);
        let g1 = Grid::new(vec![Axis::new(0.0, 6.0, 601)]).unwrap();
        let int = ControlAffineSystem::by_name("integrator1d").unwrap();
        assert!((int.lf_dissipation_bounds(&g1)[0] - 7.0).abs() < 1e-12);
        let gp = Grid::new(vec![Axis::new(0.5 * PI - 0.3, 2.0 * PI + 0.3, 41), Axis::new(-1.3, 1.3, 31)]).unwrap();
        let a = pendulum().lf_dissipation_bounds(&gp);
        assert!((a[0] - 1.3).abs() < 1e-12);
        assert!(a[1] <= 1.0 + (PI / 3.0).sin() + 0.1 + 1e-12);
    }

    #[test]
    fn registry_and_validation() {
        for b in Builtin::ALL {
            assert_eq!(ControlAffineSystem::by_name(b.name()).unwrap().name(), b.name());
        }
        assert!(matches!(ControlAffineSystem::by_name("cartpole"), Err(DynamicsError::UnknownSystem(_))));
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
        assert!(di().with_boxes(BoxSet::symmetric(1.0, 2), BoxSet::empty()).is_err());
        let g = Grid::new(vec![Axis::new(-4.0, 4.0, 11), Axis::new(-3.0, 3.0, 11)]).unwrap();
        assert!(di().check_finite_on(&g).is_ok());
    }

    fn arb_state() -> impl Strategy<Value = (f64, f64, f64, f64)> {
        (-7.0..7.0f64, -3.0..3.0f64, -5.0..5.0f64, -5.0..5.0f64)
    }

    proptest! {
        #[test]
        fn closed_form_matches_brute_force((x1, x2, p1, p2) in arb_state()) {
            for sys in [pendulum(), di()] {
                let h = sys.hamiltonian_value(&[x1, x2], &[p1, p2]);
                let b = brute_maxmin(&sys, &[x1, x2], &[p1, p2], 33);
                prop_assert!((h - b).abs() <= 1e-9, "{} vs {}", h, b);
            }
        }

        #[test]
        fn value_dominates_any_control((x1, x2, p1, p2) in arb_state(), u in -1.0..1.0f64) {
            let sys = pendulum();
            let u = u * (PI / 3.0).sin();
            let h = sys.hamiltonian_value(&[x1, x2], &[p1, p2]);
            let d = sys.worst_case_disturbance(&[x1, x2], &[p1, p2]);
            let v = dot(&sys.flow(&[x1, x2], &[u], &d).unwrap(), &[p1, p2]);
            prop_assert!(h >= v - 1e-12);
        }

        #[test]
        fn positively_homogeneous((x1, x2, p1, p2) in arb_state(), lambda in 0.01..50.0f64) {
            let sys = pendulum();
            let a = sys.hamiltonian_value(&[x1, x2], &[lambda * p1, lambda * p2]);
            let b = lambda * sys.hamiltonian_value(&[x1, x2], &[p1, p2]);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn worst_disturbance_in_box((x1, x2, p1, p2) in arb_state()) {
            let sys = pendulum();
            let d = sys.worst_case_disturbance(&[x1, x2], &[p1, p2]);
            prop_assert!(sys.disturbance_box().contains(&d, 0.0));
        }
    }
}
