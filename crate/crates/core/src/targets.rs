//! Target functions `h_S`: bounded fields whose zero-superlevel set is the
//! set of interest.
//!
//! Shapes are turned into clipped signed-distance fields (positive inside).
//! Closed-form targets are evaluated directly. A numerically computed
//! invariant set can be smoothed with a periodic cubic spline and re-checked
//! with the tangential (Nagumo-type) condition.

use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{BoxSet, ControlAffineSystem};
use crate::grid::{
    signed_distance_from_contour, zero_contour_2d, Grid, GridError, Point2, Polyline, ScalarField, SegmentIndex,
    MAX_DIM,
};

/// Vertex spacing used when discretizing analytic boundary curves.
const CURVE_SPACING: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("clip bounds must satisfy clip_low < 0 < clip_high, got [{0}, {1}]")]
    Clip(f64, f64),
    #[error("invalid shape parameters: {0}")]
    Shape(String),
    #[error("shape is {shape}D but the grid is {grid}D")]
    Dimension { shape: usize, grid: usize },
    #[error("the zero-superlevel set of the kernel is empty")]
    EmptyKernel,
    #[error("boundary check failed after {attempts} attempts (worst residual {worst}, pass fraction {pass_fraction})")]
    Verification { attempts: usize, worst: f64, pass_fraction: f64 },
    #[error("no boundary points to check")]
    EmptyBoundary,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The four double-integrator example sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiSetKind {
    /// Disk of radius `r` at the origin.
    Sa,
    /// The `p2` lens with the region between the `p1` curves, `p = -v^2/2`
    /// and the positive `p`-axis removed.
    Sb,
    /// Lens `-p1 + v^2/2 <= p <= p1 - v^2/2`.
    Sc,
    /// The `p1` lens with its corners rounded by arcs of radius
    /// `2 sqrt(p1) - 1` tangent to the parabolas.
    Sd,
}

impl DiSetKind {
    pub const ALL: [DiSetKind; 4] = [DiSetKind::Sa, DiSetKind::Sb, DiSetKind::Sc, DiSetKind::Sd];

    pub fn name(self) -> &'static str {
        match self {
            DiSetKind::Sa => "Sa",
            DiSetKind::Sb => "Sb",
            DiSetKind::Sc => "Sc",
            DiSetKind::Sd => "Sd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        DiSetKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

/// Geometric shapes with exact or polyline-based signed distance.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Interval { a: f64, b: f64 },
    Circle { center: Point2, r: f64 },
    AxisBox { lower: Vec<f64>, upper: Vec<f64> },
    DiSet { kind: DiSetKind, p1: f64, p2: f64, r: f64 },
    /// The pendulum constraint `0.5 pi <= x1 <= 2 pi`, `|x2| <= 1`.
    PendulumX,
}

impl Shape {
    pub fn pendulum_box() -> Shape {
        Shape::AxisBox { lower: vec![0.5 * std::f64::consts::PI, -1.0], upper: vec![2.0 * std::f64::consts::PI, 1.0] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Shape::Interval { .. } => 1,
            Shape::AxisBox { lower, .. } => lower.len(),
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        let bad = |m: String| Err(TargetError::Shape(m));
        match self {
            Shape::Interval { a, b } if !(a < b) => bad(format!("interval needs a < b, got [{a}, {b}]")),
            Shape::Circle { r, .. } if !(*r > 0.0) => bad(format!("circle radius must be positive, got {r}")),
            Shape::AxisBox { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() || lower.len() > MAX_DIM {
                    return bad("box bounds must have equal length between 1 and 4".into());
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return bad("box needs lower < upper in every dimension".into());
                }
                Ok(())
            }
            Shape::DiSet { kind, p1, p2, r } => match kind {
                DiSetKind::Sa if !(*r > 0.0) => bad(format!("Sa radius must be positive, got {r}")),
                DiSetKind::Sb if !(*p1 > 0.0 && p2 > p1) => bad(format!("Sb needs 0 < p1 < p2, got p1={p1}, p2={p2}")),
                DiSetKind::Sc if !(*p1 > 0.0) => bad(format!("Sc needs p1 > 0, got {p1}")),
                DiSetKind::Sd if !(*p1 > 1.0) => bad(format!("Sd needs p1 > 1, got {p1}")),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Exact membership test (closed set).
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Shape::Interval { a, b } => x[0] >= *a && x[0] <= *b,
            Shape::Circle { center, r } => (x[0] - center[0]).hypot(x[1] - center[1]) <= *r,
            Shape::AxisBox { lower, upper } => (0..lower.len()).all(|d| x[d] >= lower[d] && x[d] <= upper[d]),
            Shape::PendulumX => Shape::pendulum_box().contains(x),
            Shape::DiSet { kind, p1, p2, r } => di_contains(*kind, *p1, *p2, *r, x[0], x[1]),
        }
    }

    /// Signed distance on every grid node, positive inside.
    pub fn signed_distance(&self, grid: &Arc<Grid>) -> Result<ScalarField, TargetError> {
        self.validate()?;
        if self.dim() != grid.ndim() {
            return Err(TargetError::Dimension { shape: self.dim(), grid: grid.ndim() });
        }
        match self {
            Shape::Interval { a, b } => Ok(ScalarField::from_fn(grid.clone(), |x| (x[0] - a).min(b - x[0]))),
            Shape::Circle { center, r } => {
                Ok(ScalarField::from_fn(grid.clone(), |x| r - (x[0] - center[0]).hypot(x[1] - center[1])))
            }
            Shape::AxisBox { lower, upper } => {
                Ok(ScalarField::from_fn(grid.clone(), |x| box_signed_distance(lower, upper, x)))
            }
            Shape::PendulumX => Shape::pendulum_box().signed_distance(grid),
            Shape::DiSet { kind: DiSetKind::Sa, r, .. } => {
                Ok(ScalarField::from_fn(grid.clone(), |x| r - x[0].hypot(x[1])))
            }
            Shape::DiSet { kind, p1, p2, r } => {
                let boundary = di_boundary(*kind, *p1, *p2);
                let index = SegmentIndex::new(&boundary)?;
                Ok(ScalarField::from_fn(grid.clone(), |x| {
                    let d = index.distance([x[0], x[1]]);
                    if di_contains(*kind, *p1, *p2, *r, x[0], x[1]) { d } else { -d }
                }))
            }
        }
    }
}

fn box_signed_distance(lower: &[f64], upper: &[f64], x: &[f64]) -> f64 {
    let mut inside = f64::INFINITY;
    let mut outside = 0.0;
    for d in 0..lower.len() {
        let m = (x[d] - lower[d]).min(upper[d] - x[d]);
        inside = inside.min(m);
        if m < 0.0 {
            outside += m * m;
        }
    }
    if inside >= 0.0 { inside } else { -f64::sqrt(outside) }
}

/// Arc radius of the rounded lens.
pub fn sd_arc_radius(p1: f64) -> f64 {
    2.0 * p1.sqrt() - 1.0
}

/// Upper-half membership of `S_d`; the lower half is the point reflection.
fn sd_upper_contains(p1: f64, p: f64, v: f64) -> bool {
    let r = sd_arc_radius(p1);
    let c = p1 - r;
    let vt = (2.0 * (2.0 * p1 - r - 1.0)).sqrt();
    if v > r {
        return false;
    }
    let s = (r * r - v * v).max(0.0).sqrt();
    let right = if v <= vt { p1 - 0.5 * v * v } else { -c + s };
    p >= -c - s && p <= right
}

fn lens_contains(q: f64, p: f64, v: f64) -> bool {
    p >= -q + 0.5 * v * v && p <= q - 0.5 * v * v
}

fn sb_hole_contains(p1: f64, p: f64, v: f64) -> bool {
    v > 0.0 && p > -0.5 * v * v && p < p1 - 0.5 * v * v && p > -p1 + 0.5 * v * v
}

fn di_contains(kind: DiSetKind, p1: f64, p2: f64, r: f64, p: f64, v: f64) -> bool {
    match kind {
        DiSetKind::Sa => p.hypot(v) <= r,
        DiSetKind::Sb => lens_contains(p2, p, v) && !sb_hole_contains(p1, p, v),
        DiSetKind::Sc => lens_contains(p1, p, v),
        DiSetKind::Sd => {
            if v >= 0.0 {
                sd_upper_contains(p1, p, v)
            } else {
                sd_upper_contains(p1, -p, -v)
            }
        }
    }
}

/// Samples `curve(t)` for `t` in `[t0, t1]` with roughly uniform arc spacing,
/// both endpoints included.
fn sample_curve(curve: impl Fn(f64) -> Point2, t0: f64, t1: f64) -> Vec<Point2> {
    let probe = 64;
    let mut len = 0.0;
    let mut prev = curve(t0);
    for k in 1..=probe {
        let q = curve(t0 + (t1 - t0) * k as f64 / probe as f64);
        len += (q[0] - prev[0]).hypot(q[1] - prev[1]);
        prev = q;
    }
    let n = ((len / CURVE_SPACING).ceil() as usize).max(2);
    (0..=n).map(|k| curve(t0 + (t1 - t0) * k as f64 / n as f64)).collect()
}

fn append(path: &mut Vec<Point2>, piece: Vec<Point2>) {
    let skip = usize::from(path.last().is_some_and(|l| {
        let f = piece[0];
        (l[0] - f[0]).abs() < 1e-12 && (l[1] - f[1]).abs() < 1e-12
    }));
    path.extend(piece.into_iter().skip(skip));
}

fn close(mut path: Vec<Point2>) -> Polyline {
    if path.len() > 1 {
        let (f, l) = (path[0], path[path.len() - 1]);
        if (l[0] - f[0]).abs() < 1e-12 && (l[1] - f[1]).abs() < 1e-12 {
            path.pop();
        }
    }
    Polyline::closed(path)
}

fn lens_boundary(q: f64) -> Polyline {
    let vmax = (2.0 * q).sqrt();
    let mut path = sample_curve(|v| [q - 0.5 * v * v, v], -vmax, vmax);
    append(&mut path, sample_curve(|v| [-q + 0.5 * v * v, v], vmax, -vmax));
    close(path)
}

/// Boundary curves of a double-integrator set (not used for `S_a`).
pub fn di_boundary(kind: DiSetKind, p1: f64, p2: f64) -> Vec<Polyline> {
    match kind {
        DiSetKind::Sa => Vec::new(),
        DiSetKind::Sc => vec![lens_boundary(p1)],
        DiSetKind::Sb => {
            let top = (2.0 * p1).sqrt();
            let corner = p1.sqrt();
            let mut hole = sample_curve(|p| [p, 0.0], 0.0, p1);
            append(&mut hole, sample_curve(|v| [p1 - 0.5 * v * v, v], 0.0, top));
            append(&mut hole, sample_curve(|v| [-p1 + 0.5 * v * v, v], top, corner));
            append(&mut hole, sample_curve(|v| [-0.5 * v * v, v], corner, 0.0));
            vec![lens_boundary(p2), close(hole)]
        }
        DiSetKind::Sd => {
            let r = sd_arc_radius(p1);
            let c = p1 - r;
            let vt = (2.0 * (2.0 * p1 - r - 1.0)).sqrt();
            let theta_t = vt.atan2(p1 - 0.5 * vt * vt + c);
            let mut upper = sample_curve(|v| [p1 - 0.5 * v * v, v], 0.0, vt);
            append(&mut upper, sample_curve(|t| [-c + r * t.cos(), r * t.sin()], theta_t, std::f64::consts::PI));
            let lower: Vec<Point2> = upper.iter().map(|q| [-q[0], -q[1]]).collect();
            let mut path = upper;
            append(&mut path, lower);
            vec![close(path)]
        }
    }
}

/// Closed-form target functions.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticFn {
    /// `offset + coeffs . x`
    Affine { offset: f64, coeffs: Vec<f64> },
    /// `peak - |x - center|^2`
    Quadratic { peak: f64, center: Vec<f64> },
}

impl AnalyticFn {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticFn::Affine { coeffs, .. } => coeffs.len(),
            AnalyticFn::Quadratic { center, .. } => center.len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticFn::Affine { offset, coeffs } => offset + coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
            AnalyticFn::Quadratic { peak, center } => {
                peak - center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            AnalyticFn::Affine { coeffs, .. } => out[..coeffs.len()].copy_from_slice(coeffs),
            AnalyticFn::Quadratic { center, .. } => {
                for (d, c) in center.iter().enumerate() {
                    out[d] = -2.0 * (x[d] - c);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    Shape(Shape),
    /// Signed distance to the zero level of a given field, signed by it.
    Field(ScalarField),
    Analytic(AnalyticFn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl TargetSpec {
    pub fn shape(shape: Shape, clip_low: f64, clip_high: f64) -> Self {
        TargetSpec { kind: TargetKind::Shape(shape), clip_low, clip_high }
    }

    pub fn analytic(f: AnalyticFn, clip_low: f64, clip_high: f64) -> Self {
        TargetSpec { kind: TargetKind::Analytic(f), clip_low, clip_high }
    }

    /// The one-dimensional ramp `max{2 - x, -2}`.
    pub fn ramp_1d() -> Self {
        TargetSpec::analytic(AnalyticFn::Affine { offset: 2.0, coeffs: vec![-1.0] }, -2.0, 10.0)
    }
}

fn check_clip(lo: f64, hi: f64) -> Result<(), TargetError> {
    if lo < 0.0 && hi > 0.0 { Ok(()) } else { Err(TargetError::Clip(lo, hi)) }
}

/// Builds the clipped target field for a spec.
pub fn build_target(spec: &TargetSpec, grid: &Arc<Grid>) -> Result<ScalarField, TargetError> {
    check_clip(spec.clip_low, spec.clip_high)?;
    let clip = |v: f64| v.clamp(spec.clip_low, spec.clip_high);
    let raw = match &spec.kind {
        TargetKind::Shape(s) => s.signed_distance(grid)?,
        TargetKind::Analytic(f) => {
            if f.dim() != grid.ndim() {
                return Err(TargetError::Dimension { shape: f.dim(), grid: grid.ndim() });
            }
            ScalarField::from_fn(grid.clone(), |x| f.value(x))
        }
        TargetKind::Field(src) => field_signed_distance(src, grid)?,
    };
    Ok(raw.map(clip))
}

fn field_signed_distance(src: &ScalarField, grid: &Arc<Grid>) -> Result<ScalarField, TargetError> {
    if src.grid().as_ref() != grid.as_ref() {
        return Err(TargetError::Grid(GridError::GridMismatch));
    }
    match grid.ndim() {
        1 => {
            let v = src.values();
            let crossings: Vec<f64> = (0..v.len() - 1)
                .filter(|&i| (v[i] >= 0.0) != (v[i + 1] >= 0.0))
                .map(|i| grid.coord(0, i) + v[i] / (v[i] - v[i + 1]) * grid.spacing(0))
                .collect();
            if crossings.is_empty() {
                return Err(TargetError::Grid(GridError::EmptyContour));
            }
            Ok(ScalarField::from_fn(grid.clone(), |x| {
                crossings.iter().map(|c| (x[0] - c).abs()).fold(f64::INFINITY, f64::min)
            })
            .with_values(
                src.values()
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| {
                        let x = grid.coord(0, k);
                        let d = crossings.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
                        if s >= 0.0 { d } else { -d }
                    })
                    .collect(),
            )?)
        }
        2 => {
            let contour = zero_contour_2d(src, 0.0)?;
            Ok(signed_distance_from_contour(&contour, grid, src)?)
        }
        n => Err(TargetError::Grid(GridError::Not2d(n))),
    }
}

/// A barrier candidate evaluable at arbitrary states.
#[derive(Debug, Clone)]
pub enum BarrierFunction {
    /// Interpolated field; gradients use central differences of the
    /// interpolant one grid spacing apart.
    Field(ScalarField),
    /// Closed form clipped to `[clip_low, clip_high]`.
    Analytic { f: AnalyticFn, clip_low: f64, clip_high: f64 },
}

impl BarrierFunction {
    pub fn analytic(f: AnalyticFn) -> Self {
        BarrierFunction::Analytic { f, clip_low: f64::NEG_INFINITY, clip_high: f64::INFINITY }
    }

    pub fn dim(&self) -> usize {
        match self {
            BarrierFunction::Field(f) => f.grid().ndim(),
            BarrierFunction::Analytic { f, .. } => f.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            BarrierFunction::Field(f) => f.sample(x),
            BarrierFunction::Analytic { f, clip_low, clip_high } => f.value(x).clamp(*clip_low, *clip_high),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BarrierFunction::Field(f) => f.gradient_at(x, out),
            BarrierFunction::Analytic { f, clip_low, clip_high } => {
                let v = f.value(x);
                if v < *clip_low || v > *clip_high {
                    out[..f.dim()].iter_mut().for_each(|g| *g = 0.0);
                } else {
                    f.gradient(x, out);
                }
            }
        }
    }

    /// `max_u min_d grad h(x) . f(x, u, d)`.
    pub fn tangential_residual(&self, system: &ControlAffineSystem, x: &[f64]) -> f64 {
        let mut g = [0.0; MAX_DIM];
        self.gradient(x, &mut g);
        system.hamiltonian_value(x, &g[..self.dim()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentialReport {
    pub points: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub tolerance: f64,
    pub pass_fraction: f64,
    pub worst: f64,
}

impl TangentialReport {
    pub fn passed(&self) -> bool {
        self.pass_fraction >= 1.0
    }
}

/// Evaluates the tangential condition `max_u min_d grad h . f >= -tol` at the
/// given boundary points. With `robust = false` the disturbance is fixed at
/// the midpoint of its box.
pub fn tangential_check(
    h: &BarrierFunction,
    system: &ControlAffineSystem,
    points: &[Vec<f64>],
    robust: bool,
    tol: f64,
) -> Result<TangentialReport, TargetError> {
    if points.is_empty() {
        return Err(TargetError::EmptyBoundary);
    }
    let nominal;
    let sys = if robust || system.disturbance_dim() == 0 {
        system
    } else {
        nominal = system
            .with_boxes(system.control_box().clone(), BoxSet::singleton(system.disturbance_box().midpoint()))
            .expect("singleton box keeps the disturbance dimension");
        &nominal
    };
    let residuals: Vec<f64> = points.iter().map(|x| h.tangential_residual(sys, x)).collect();
    let passed = residuals.iter().filter(|&&r| r >= -tol).count();
    Ok(TangentialReport {
        points: points.to_vec(),
        worst: residuals.iter().copied().fold(f64::INFINITY, f64::min),
        pass_fraction: passed as f64 / residuals.len() as f64,
        residuals,
        tolerance: tol,
    })
}

/// `n` points spaced evenly by arc length along the zero contours of a 2D
/// field, skipping points within `margin` of the non-periodic domain edge.
pub fn boundary_samples(field: &ScalarField, n: usize, margin: f64) -> Result<Vec<Vec<f64>>, TargetError> {
    let contour = zero_contour_2d(field, 0.0)?;
    let g = field.grid();
    let inside = |q: &Point2| {
        (0..2).all(|d| {
            let a = g.axis(d);
            a.periodic || (q[d] >= a.min + margin && q[d] <= a.max - margin)
        })
    };
    let total: f64 = contour.iter().map(Polyline::length).sum();
    if total <= 0.0 || n == 0 {
        return Err(TargetError::EmptyBoundary);
    }
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut next = 0.5 * step;
    let mut walked = 0.0;
    for poly in &contour {
        for (a, b) in poly.segments() {
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            while next <= walked + len && len > 0.0 {
                let t = (next - walked) / len;
                let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                if inside(&q) {
                    out.push(q.to_vec());
                }
                next += step;
            }
            walked += len;
        }
    }
    if out.is_empty() {
        return Err(TargetError::EmptyBoundary);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothParams {
    pub margin: f64,
    pub n_boundary_checks: usize,
    /// Absolute tolerance of the tangential check; `None` uses 1e-2 of the
    /// clip range.
    pub tol_boundary: Option<f64>,
    pub clip_low: f64,
    pub clip_high: f64,
    pub max_retries: usize,
}

impl Default for SmoothParams {
    fn default() -> Self {
        SmoothParams {
            margin: 0.0,
            n_boundary_checks: 200,
            tol_boundary: None,
            clip_low: -1.0,
            clip_high: 1.0,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothedSet {
    pub h: ScalarField,
    pub curve: Polyline,
    pub margin_used: f64,
    pub attempts: usize,
    pub report: TangentialReport,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl SmoothedSet {
    /// Rebuilds the clipped, offset signed distance of the smoothed curve on
    /// another 2D grid.
    pub fn resample(&self, grid: &Arc<Grid>) -> Result<ScalarField, TargetError> {
        if grid.ndim() != 2 {
            return Err(TargetError::Grid(GridError::Not2d(grid.ndim())));
        }
        let dist = curve_distance(&self.curve, grid)?;
        Ok(dist.map(|d| (d - self.margin_used).clamp(self.clip_low, self.clip_high)))
    }
}

fn curve_distance(curve: &Polyline, grid: &Arc<Grid>) -> Result<ScalarField, TargetError> {
    let index = SegmentIndex::new(std::slice::from_ref(curve))?;
    Ok(ScalarField::from_fn(grid.clone(), |x| {
        let d = index.distance([x[0], x[1]]);
        if curve.contains([x[0], x[1]]) { d } else { -d }
    }))
}

/// Replaces the boundary of `{kernel >= 0}` by a smooth closed curve, offset
/// inward by `margin`, and rebuilds a clipped signed-distance target. The
/// margin grows by one grid spacing per failed tangential check.
pub fn smooth_invariant_set(
    kernel: &ScalarField,
    system: &ControlAffineSystem,
    params: &SmoothParams,
) -> Result<SmoothedSet, TargetError> {
    check_clip(params.clip_low, params.clip_high)?;
    let grid = kernel.grid().clone();
    if grid.ndim() != 2 {
        return Err(TargetError::Grid(GridError::Not2d(grid.ndim())));
    }
    let contour = zero_contour_2d(kernel, 0.0)?;
    let outer = contour
        .iter()
        .filter(|p| p.closed && p.points.len() >= 8)
        .max_by(|a, b| a.signed_area().abs().total_cmp(&b.signed_area().abs()))
        .ok_or(TargetError::EmptyKernel)?;
    let k = (outer.points.len() / 32).clamp(1, 4);
    let knots: Vec<Point2> = outer.points.iter().step_by(k).copied().collect();
    let mut curve = periodic_spline(&knots, 8);
    if curve.signed_area() < 0.0 {
        curve.points.reverse();
    }
    let dist = curve_distance(&curve, &grid)?;
    let tol = params.tol_boundary.unwrap_or(1e-2 * (params.clip_high - params.clip_low));
    let h_grid = grid.min_spacing();
    let edge_margin = 2.0 * grid.max_spacing();
    let mut margin = params.margin;
    let mut last = None;
    for attempt in 1..=params.max_retries + 1 {
        let h = dist.map(|d| (d - margin).clamp(params.clip_low, params.clip_high));
        let report = match boundary_samples(&h, params.n_boundary_checks, edge_margin) {
            Ok(points) => tangential_check(&BarrierFunction::Field(h.clone()), system, &points, true, tol)?,
            Err(TargetError::EmptyBoundary) | Err(TargetError::Grid(GridError::EmptyContour)) => {
                return Err(TargetError::EmptyKernel)
            }
            Err(e) => return Err(e),
        };
        if report.passed() {
            return Ok(SmoothedSet {
                h,
                curve,
                margin_used: margin,
                attempts: attempt,
                report,
                clip_low: params.clip_low,
                clip_high: params.clip_high,
            });
        }
        last = Some(report);
        margin += h_grid;
    }
    let report = last.expect("at least one attempt");
    Err(TargetError::Verification {
        attempts: params.max_retries + 1,
        worst: report.worst,
        pass_fraction: report.pass_fraction,
    })
}

/// Closed interpolating cubic spline through `knots` with chord-length
/// parameterization, evaluated at `per_interval` points per knot interval.
pub fn periodic_spline(knots: &[Point2], per_interval: usize) -> Polyline {
    let n = knots.len();
    if n < 3 {
        return Polyline::closed(knots.to_vec());
    }
    let h: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (knots[i], knots[(i + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1]).max(1e-12)
        })
        .collect();
    let coord = |c: usize| -> Vec<f64> { knots.iter().map(|p| p[c]).collect() };
    let (xs, ys) = (coord(0), coord(1));
    let (mx, my) = (spline_moments(&h, &xs), spline_moments(&h, &ys));
    let eval = |y: &[f64], m: &[f64], i: usize, s: f64| {
        let j = (i + 1) % n;
        let hi = h[i];
        m[i] * (hi - s).powi(3) / (6.0 * hi)
            + m[j] * s.powi(3) / (6.0 * hi)
            + (y[i] / hi - m[i] * hi / 6.0) * (hi - s)
            + (y[j] / hi - m[j] * hi / 6.0) * s
    };
    let mut points = Vec::with_capacity(n * per_interval);
    for i in 0..n {
        for k in 0..per_interval {
            let s = h[i] * k as f64 / per_interval as f64;
            points.push([eval(&xs, &mx, i, s), eval(&ys, &my, i, s)]);
        }
    }
    Polyline::closed(points)
}

/// Second-derivative moments of the periodic cubic spline: a cyclic
/// tridiagonal system solved with the Sherman-Morrison correction.
fn spline_moments(h: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let prev = |i: usize| (i + n - 1) % n;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut r = vec![0.0; n];
    for i in 0..n {
        let (hp, hi) = (h[prev(i)], h[i]);
        a[i] = hp;
        b[i] = 2.0 * (hp + hi);
        c[i] = hi;
        r[i] = 6.0 * ((y[(i + 1) % n] - y[i]) / hi - (y[i] - y[prev(i)]) / hp);
    }
    let (alpha, beta) = (c[n - 1], a[0]);
    let gamma = -b[0];
    let mut bb = b.clone();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = thomas(&a, &bb, &c, &r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(&a, &bb, &c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = b[0];
    x[0] = r[0] / beta;
    for i in 1..n {
        cp[i] = c[i - 1] / beta;
        beta = b[i] - a[i] * cp[i];
        x[i] = (r[i] - a[i] * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        x[i] -= cp[i + 1] * x[i + 1];
    }
    x
}

/// Counts nodes in the band `|h| <= band` whose central-difference gradient
/// norm is below 0.5, a sampled proxy for a nonvanishing gradient near the
/// boundary.
pub fn weak_gradient_count(h: &ScalarField, band: f64) -> usize {
    let g = h.grid();
    (0..g.len())
        .filter(|&k| h.get(k).abs() <= band && g.is_interior(k, 1))
        .filter(|&k| {
            let idx = g.unravel(k);
            let norm2: f64 = (0..g.ndim()).map(|d| h.central_diff(k, idx[d], d).powi(2)).sum();
            norm2 < 0.25
        })
        .count()
}
