//! Dense rectangular grids, sampled scalar fields and the numerical
//! primitives the solvers build on: multilinear interpolation, central and
//! one-sided differences, marching-squares contours and brute-force signed
//! distance to polylines.
//!
//! Values are stored row-major: the last axis varies fastest.

use std::sync::Arc;

use thiserror::Error;

/// Largest supported number of state dimensions.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must have between 1 and {MAX_DIM} dimensions, got {0}")]
    Dimension(usize),
    #[error("axis {axis}: count must be at least 2, got {count}")]
    Count { axis: usize, count: usize },
    #[error("axis {axis}: min ({min}) must be strictly less than max ({max})")]
    Bounds { axis: usize, min: f64, max: f64 },
    #[error("expected {expected} values for the grid, got {got}")]
    Length { expected: usize, got: usize },
    #[error("point has {got} components, grid has {expected} dimensions")]
    PointDimension { expected: usize, got: usize },
    #[error("point component {0} is not finite")]
    NonFinite(usize),
    #[error("multi-index {index:?} is outside the grid")]
    Index { index: Vec<usize> },
    #[error("operation requires a 2D grid, got {0}D")]
    Not2d(usize),
    #[error("contour is empty")]
    EmptyContour,
    #[error("fields live on different grids")]
    GridMismatch,
}

/// One axis of a rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Axis { min, max, count, periodic: false }
    }

    pub fn periodic(min: f64, max: f64, count: usize) -> Self {
        Axis { min, max, count, periodic: true }
    }

    /// Node spacing. A periodic axis does not store the node at `max`
    /// because it coincides with `min`.
    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.max - self.min) / self.count as f64
        } else {
            (self.max - self.min) / (self.count - 1) as f64
        }
    }

    pub fn extent(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        let ndim = axes.len();
        if ndim == 0 || ndim > MAX_DIM {
            return Err(GridError::Dimension(ndim));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.count < 2 {
                return Err(GridError::Count { axis: i, count: a.count });
            }
            if !(a.min < a.max) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(GridError::Bounds { axis: i, min: a.min, max: a.max });
            }
        }
        let spacing: Vec<f64> = axes.iter().map(Axis::spacing).collect();
        let mut strides = vec![1usize; ndim];
        for d in (0..ndim - 1).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].count;
        }
        let len = axes.iter().map(|a| a.count).product();
        Ok(Grid { axes, spacing, strides, len })
    }

    /// Convenience wrapper producing an `Arc`, which is how fields hold grids.
    pub fn shared(axes: Vec<Axis>) -> Result<Arc<Self>, GridError> {
        Grid::new(axes).map(Arc::new)
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    pub fn spacing(&self, d: usize) -> f64 {
        self.spacing[d]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        self.axes[d].min + i as f64 * self.spacing[d]
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for d in 0..self.ndim() {
            idx[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> Result<usize, GridError> {
        if idx.len() != self.ndim() || idx.iter().zip(&self.axes).any(|(&i, a)| i >= a.count) {
            return Err(GridError::Index { index: idx.to_vec() });
        }
        Ok(idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum())
    }

    /// Coordinates of a grid node, written into `out[..ndim]`.
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let idx = self.unravel(flat);
        for d in 0..self.ndim() {
            out[d] = self.coord(d, idx[d]);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ndim()];
        self.point_into(flat, &mut out);
        out
    }

    /// Index of the node nearest to `x` (clamped / wrapped like interpolation).
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for d in 0..self.ndim() {
            let a = &self.axes[d];
            let s = (x[d] - a.min) / self.spacing[d];
            let i = if a.periodic {
                (s.round() as i64).rem_euclid(a.count as i64) as usize
            } else {
                s.round().clamp(0.0, (a.count - 1) as f64) as usize
            };
            flat += i * self.strides[d];
        }
        flat
    }

    /// Flat index of the neighbor one step along `d` (`forward` or backward),
    /// wrapping periodic axes; `None` past a non-periodic boundary.
    #[inline]
    pub fn neighbor(&self, flat: usize, i: usize, d: usize, forward: bool) -> Option<usize> {
        let a = &self.axes[d];
        let s = self.strides[d];
        if forward {
            if i + 1 < a.count {
                Some(flat + s)
            } else if a.periodic {
                Some(flat - (a.count - 1) * s)
            } else {
                None
            }
        } else if i > 0 {
            Some(flat - s)
        } else if a.periodic {
            Some(flat + (a.count - 1) * s)
        } else {
            None
        }
    }

    /// Whether a node lies at least `margin` nodes away from every
    /// non-periodic boundary.
    pub fn is_interior(&self, flat: usize, margin: usize) -> bool {
        let idx = self.unravel(flat);
        (0..self.ndim()).all(|d| {
            let a = &self.axes[d];
            a.periodic || (idx[d] >= margin && idx[d] + margin < a.count)
        })
    }
}

/// Values of a function sampled on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length { expected: grid.len(), got: values.len() });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        ScalarField { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = [0.0; MAX_DIM];
        let n = grid.ndim();
        let values = (0..grid.len())
            .map(|k| {
                grid.point_into(k, &mut x);
                f(&x[..n])
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// A new field on the same grid.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, GridError> {
        ScalarField::new(self.grid.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Sup-norm distance to another field on the same grid.
    pub fn linf_distance(&self, other: &ScalarField) -> Result<f64, GridError> {
        if !self.same_grid(other) {
            return Err(GridError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Multilinear interpolation. Non-periodic coordinates are clamped to the
    /// domain, periodic ones wrap.
    pub fn interpolate(&self, point: &[f64]) -> Result<f64, GridError> {
        if point.len() != self.grid.ndim() {
            return Err(GridError::PointDimension { expected: self.grid.ndim(), got: point.len() });
        }
        if let Some(i) = point.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(self.sample(point))
    }

    /// Unchecked form of [`ScalarField::interpolate`] for hot loops; the
    /// caller guarantees `point` has `ndim` finite components.
    #[inline]
    pub fn sample(&self, point: &[f64]) -> f64 {
        let g = &*self.grid;
        match g.ndim() {
            1 => {
                let (i0, i1, t) = locate(&g.axes[0], g.spacing[0], point[0]);
                self.values[i0] * (1.0 - t) + self.values[i1] * t
            }
            2 => {
                let (a0, a1, s) = locate(&g.axes[0], g.spacing[0], point[0]);
                let (b0, b1, t) = locate(&g.axes[1], g.spacing[1], point[1]);
                let st = g.strides[0];
                let v = &self.values;
                let lo = v[a0 * st + b0] * (1.0 - t) + v[a0 * st + b1] * t;
                let hi = v[a1 * st + b0] * (1.0 - t) + v[a1 * st + b1] * t;
                lo * (1.0 - s) + hi * s
            }
            n => {
                let mut lo = [0usize; MAX_DIM];
                let mut hi = [0usize; MAX_DIM];
                let mut w = [0.0; MAX_DIM];
                for d in 0..n {
                    let (i0, i1, t) = locate(&g.axes[d], g.spacing[d], point[d]);
                    lo[d] = i0;
                    hi[d] = i1;
                    w[d] = t;
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << n) {
                    let mut weight = 1.0;
                    let mut flat = 0;
                    for d in 0..n {
                        if corner >> d & 1 == 1 {
                            weight *= w[d];
                            flat += hi[d] * g.strides[d];
                        } else {
                            weight *= 1.0 - w[d];
                            flat += lo[d] * g.strides[d];
                        }
                    }
                    if weight != 0.0 {
                        acc += weight * self.values[flat];
                    }
                }
                acc
            }
        }
    }

    fn check_index(&self, idx: &[usize]) -> Result<usize, GridError> {
        self.grid.ravel(idx)
    }

    /// Central difference along `d` at a node: second order inside, one-sided
    /// first order at non-periodic boundaries.
    #[inline]
    pub fn central_diff(&self, flat: usize, i: usize, d: usize) -> f64 {
        let g = &*self.grid;
        let h = g.spacing[d];
        match (g.neighbor(flat, i, d, false), g.neighbor(flat, i, d, true)) {
            (Some(l), Some(r)) => (self.values[r] - self.values[l]) / (2.0 * h),
            (None, Some(r)) => (self.values[r] - self.values[flat]) / h,
            (Some(l), None) => (self.values[flat] - self.values[l]) / h,
            (None, None) => 0.0,
        }
    }

    /// Left and right one-sided differences along `d`; at a non-periodic
    /// boundary the missing side copies the available one.
    #[inline]
    pub fn one_sided(&self, flat: usize, i: usize, d: usize) -> (f64, f64) {
        let g = &*self.grid;
        let h = g.spacing[d];
        let v = self.values[flat];
        let left = g.neighbor(flat, i, d, false).map(|l| (v - self.values[l]) / h);
        let right = g.neighbor(flat, i, d, true).map(|r| (self.values[r] - v) / h);
        match (left, right) {
            (Some(l), Some(r)) => (l, r),
            (Some(l), None) => (l, l),
            (None, Some(r)) => (r, r),
            (None, None) => (0.0, 0.0),
        }
    }

    pub fn gradient_central(&self, idx: &[usize]) -> Result<Vec<f64>, GridError> {
        let flat = self.check_index(idx)?;
        Ok((0..self.grid.ndim()).map(|d| self.central_diff(flat, idx[d], d)).collect())
    }

    pub fn upwind_derivs(&self, idx: &[usize]) -> Result<Vec<(f64, f64)>, GridError> {
        let flat = self.check_index(idx)?;
        Ok((0..self.grid.ndim()).map(|d| self.one_sided(flat, idx[d], d)).collect())
    }

    /// Gradient at an arbitrary state: central differences over the 2n
    /// interpolated neighbors one grid spacing away.
    pub fn gradient_at(&self, x: &[f64], out: &mut [f64]) {
        let g = &*self.grid;
        let n = g.ndim();
        let mut probe = [0.0; MAX_DIM];
        probe[..n].copy_from_slice(&x[..n]);
        for d in 0..n {
            let h = g.spacing[d];
            let a = &g.axes[d];
            let (lo, hi) = if a.periodic {
                (x[d] - h, x[d] + h)
            } else {
                let c = x[d].clamp(a.min, a.max);
                ((c - h).max(a.min), (c + h).min(a.max))
            };
            probe[d] = hi;
            let fp = self.sample(&probe[..n]);
            probe[d] = lo;
            let fm = self.sample(&probe[..n]);
            probe[d] = x[d];
            out[d] = if hi > lo { (fp - fm) / (hi - lo) } else { 0.0 };
        }
    }
}

/// Lower node, upper node and fractional weight of a coordinate on an axis.
#[inline]
fn locate(a: &Axis, h: f64, x: f64) -> (usize, usize, f64) {
    let s = snap((x - a.min) / h);
    if a.periodic {
        let n = a.count as f64;
        let s = s.rem_euclid(n);
        let f = s.floor();
        let i0 = (f as usize).min(a.count - 1);
        let i1 = if i0 + 1 == a.count { 0 } else { i0 + 1 };
        (i0, i1, s - f)
    } else {
        let s = s.clamp(0.0, (a.count - 1) as f64);
        let i0 = (s.floor() as usize).min(a.count - 2);
        (i0, i0 + 1, s - i0 as f64)
    }
}

/// Rounds a fractional node position onto the node when the gap is only
/// rounding noise, so node coordinates reproduce node values exactly.
#[inline]
fn snap(s: f64) -> f64 {
    let r = s.round();
    if (s - r).abs() <= 1e-9 { r } else { s }
}

pub type Point2 = [f64; 2];

/// A chain of 2D vertices; a closed polyline implicitly joins its last
/// vertex back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point2>,
    pub closed: bool,
}

impl Polyline {
    pub fn closed(points: Vec<Point2>) -> Self {
        Polyline { points, closed: true }
    }

    pub fn open(points: Vec<Point2>) -> Self {
        Polyline { points, closed: false }
    }

    /// Segments as pairs of endpoints.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        let m = if self.closed && n > 2 { n } else { n.saturating_sub(1) };
        (0..m).map(move |k| (self.points[k], self.points[(k + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| dist(a, b)).sum()
    }

    /// Shoelace signed area (positive for counter-clockwise).
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for k in 0..n {
            let a = self.points[k];
            let b = self.points[(k + 1) % n];
            s += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * s
    }

    /// Even-odd point-in-polygon test treating the polyline as closed.
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.points.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[j];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

#[inline]
fn dist(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[inline]
pub(crate) fn segment_dist2(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ex * ex + ey * ey
}

/// Marching-squares extraction of `{field = level}` on a 2D grid.
///
/// Vertices sit on cell edges at the linearly interpolated crossing. Saddle
/// cells are split according to the sign of the cell-center average.
/// Periodic seams are not stitched.
pub fn zero_contour_2d(field: &ScalarField, level: f64) -> Result<Vec<Polyline>, GridError> {
    let g = field.grid();
    if g.ndim() != 2 {
        return Err(GridError::Not2d(g.ndim()));
    }
    let (nx, ny) = (g.axis(0).count, g.axis(1).count);
    let v = |i: usize, j: usize| field.values[i * ny + j] - level;
    let above = |a: f64| a >= 0.0;

    // Edge ids: 2*(i*ny+j) for the edge (i,j)-(i+1,j), +1 for (i,j)-(i,j+1).
    let h_edge = |i: usize, j: usize| 2 * (i * ny + j);
    let v_edge = |i: usize, j: usize| 2 * (i * ny + j) + 1;
    let mut vertex = std::collections::HashMap::new();
    let mut crossing = |id: usize, i0: usize, j0: usize, i1: usize, j1: usize| {
        vertex.entry(id).or_insert_with(|| {
            let (a, b) = (v(i0, j0), v(i1, j1));
            let t = a / (a - b);
            let x0 = [g.coord(0, i0), g.coord(1, j0)];
            let x1 = [g.coord(0, i1), g.coord(1, j1)];
            [x0[0] + t * (x1[0] - x0[0]), x0[1] + t * (x1[1] - x0[1])]
        });
        id
    };

    let mut segments: Vec<(usize, usize)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let b = c.map(above);
            if b.iter().all(|&x| x) || b.iter().all(|&x| !x) {
                continue;
            }
            let mut e = [usize::MAX; 4];
            if b[0] != b[1] {
                e[0] = crossing(h_edge(i, j), i, j, i + 1, j);
            }
            if b[1] != b[2] {
                e[1] = crossing(v_edge(i + 1, j), i + 1, j, i + 1, j + 1);
            }
            if b[2] != b[3] {
                e[2] = crossing(h_edge(i, j + 1), i, j + 1, i + 1, j + 1);
            }
            if b[3] != b[0] {
                e[3] = crossing(v_edge(i, j), i, j, i, j + 1);
            }
            let crossed: Vec<usize> = e.iter().copied().filter(|&x| x != usize::MAX).collect();
            if crossed.len() == 2 {
                segments.push((crossed[0], crossed[1]));
            } else {
                let center = above(0.25 * (c[0] + c[1] + c[2] + c[3]));
                if center == b[0] {
                    // c0 and c2 connect through the center: cut off c1 and c3.
                    segments.push((e[0], e[1]));
                    segments.push((e[2], e[3]));
                } else {
                    segments.push((e[3], e[0]));
                    segments.push((e[1], e[2]));
                }
            }
        }
    }
    Ok(chain_segments(&segments, &vertex))
}

fn chain_segments(
    segments: &[(usize, usize)],
    vertex: &std::collections::HashMap<usize, Point2>,
) -> Vec<Polyline> {
    let mut at_edge: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        at_edge.entry(a).or_default().push(k);
        at_edge.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let next = |edge: usize, used: &[bool]| at_edge[&edge].iter().copied().find(|&s| !used[s]);
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut end) = segments[start];
        let mut forward = vec![first, end];
        while let Some(s) = next(end, &used) {
            used[s] = true;
            let (a, b) = segments[s];
            end = if a == end { b } else { a };
            forward.push(end);
        }
        let closed = forward.len() > 2 && forward.first() == forward.last();
        if closed {
            forward.pop();
        } else {
            let mut back = Vec::new();
            let mut head = first;
            while let Some(s) = next(head, &used) {
                used[s] = true;
                let (a, b) = segments[s];
                head = if a == head { b } else { a };
                back.push(head);
            }
            back.reverse();
            back.extend(forward);
            forward = back;
        }
        let points = forward.iter().map(|e| vertex[e]).collect();
        out.push(Polyline { points, closed });
    }
    out
}

/// Exact Euclidean distance from every node to the nearest contour segment,
/// signed by `sign_source` (non-negative values count as inside / positive).
pub fn signed_distance_from_contour(
    contour: &[Polyline],
    grid: &Arc<Grid>,
    sign_source: &ScalarField,
) -> Result<ScalarField, GridError> {
    if grid.ndim() != 2 {
        return Err(GridError::Not2d(grid.ndim()));
    }
    if sign_source.grid().as_ref() != grid.as_ref() {
        return Err(GridError::GridMismatch);
    }
    let index = SegmentIndex::new(contour)?;
    let mut x = [0.0; 2];
    let values = (0..grid.len())
        .map(|k| {
            grid.point_into(k, &mut x);
            let d = index.distance(x);
            if sign_source.values[k] >= 0.0 { d } else { -d }
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// Segments grouped into fixed-size chunks with bounding boxes so nearest
/// queries can skip whole chunks while staying exact.
pub(crate) struct SegmentIndex {
    segments: Vec<(Point2, Point2)>,
    boxes: Vec<[f64; 4]>,
}

const CHUNK: usize = 16;

impl SegmentIndex {
    pub(crate) fn new(contour: &[Polyline]) -> Result<Self, GridError> {
        let mut segments: Vec<(Point2, Point2)> = contour.iter().flat_map(|p| p.segments()).collect();
        if segments.is_empty() {
            // A single vertex still defines a distance.
            match contour.iter().find_map(|p| p.points.first()) {
                Some(&p) => segments.push((p, p)),
                None => return Err(GridError::EmptyContour),
            }
        }
        let boxes = segments
            .chunks(CHUNK)
            .map(|c| {
                let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
                for (p, q) in c {
                    b[0] = b[0].min(p[0]).min(q[0]);
                    b[1] = b[1].min(p[1]).min(q[1]);
                    b[2] = b[2].max(p[0]).max(q[0]);
                    b[3] = b[3].max(p[1]).max(q[1]);
                }
                b
            })
            .collect();
        Ok(SegmentIndex { segments, boxes })
    }

    pub(crate) fn distance(&self, p: Point2) -> f64 {
        let mut best = f64::INFINITY;
        // Visit chunks nearest-box-first so the pruning bound tightens early.
        let mut order: Vec<(f64, usize)> = self
            .boxes
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let dx = (b[0] - p[0]).max(0.0).max(p[0] - b[2]);
                let dy = (b[1] - p[1]).max(0.0).max(p[1] - b[3]);
                (dx * dx + dy * dy, k)
            })
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        for (lb, k) in order {
            if lb >= best {
                break;
            }
            let end = ((k + 1) * CHUNK).min(self.segments.len());
            for &(a, b) in &self.segments[k * CHUNK..end] {
                best = best.min(segment_dist2(p, a, b));
            }
        }
        best.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(min: f64, max: f64, n: usize) -> Arc<Grid> {
        Grid::shared(vec![Axis::new(min, max, n)]).unwrap()
    }

    fn square(n: usize) -> Arc<Grid> {
        Grid::shared(vec![Axis::new(-2.0, 2.0, n), Axis::new(-2.0, 2.0, n)]).unwrap()
    }

    #[test]
    fn spacing_and_counts() {
        let g = line(0.0, 6.0, 601);
        assert!((g.spacing(0) - 0.01).abs() < 1e-15);
        let p = Grid::new(vec![Axis::periodic(0.0, 2.0 * std::f64::consts::PI, 100)]).unwrap();
        assert!((p.spacing(0) - 2.0 * std::f64::consts::PI / 100.0).abs() < 1e-15);
        let g2 = Grid::new(vec![Axis::new(-4.0, 4.0, 401), Axis::new(-3.0, 3.0, 301)]).unwrap();
        assert_eq!(g2.len(), 120_701);
    }

    #[test]
    fn rejects_bad_axes() {
        assert_eq!(Grid::new(vec![Axis::new(0.0, 1.0, 1)]), Err(GridError::Count { axis: 0, count: 1 }));
        assert!(matches!(Grid::new(vec![Axis::new(1.0, 1.0, 3)]), Err(GridError::Bounds { .. })));
        assert_eq!(Grid::new(vec![]), Err(GridError::Dimension(0)));
        assert_eq!(Grid::new(vec![Axis::new(0.0, 1.0, 2); 5]), Err(GridError::Dimension(5)));
    }

    #[test]
    fn ravel_unravel_inverse() {
        let g = Grid::new(vec![Axis::new(0.0, 1.0, 3), Axis::new(0.0, 1.0, 4), Axis::new(0.0, 1.0, 5)]).unwrap();
        for k in 0..g.len() {
            let idx = g.unravel(k);
            assert_eq!(g.ravel(&idx[..3]).unwrap(), k);
        }
    }

    #[test]
    fn interpolation_linear_and_clamped() {
        let g = line(0.0, 6.0, 601);
        let f = ScalarField::from_fn(g, |x| 3.0 * x[0]);
        assert!((f.interpolate(&[1.005]).unwrap() - 3.015).abs() < 1e-12);
        assert_eq!(f.interpolate(&[-0.5]).unwrap(), f.get(0));
        assert_eq!(f.interpolate(&[2.0]).unwrap(), f.get(200));
        assert_eq!(f.interpolate(&[f64::NAN]), Err(GridError::NonFinite(0)));
    }

    #[test]
    fn interpolation_wraps_periodic() {
        let g = Grid::shared(vec![Axis::periodic(0.0, 1.0, 10)]).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0]);
        // Between node 9 (0.9) and node 0 (wrapped to 1.0).
        assert!((f.interpolate(&[0.95]).unwrap() - 0.45).abs() < 1e-12);
        assert!((f.interpolate(&[1.2]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn derivatives() {
        let g = line(0.0, 2.0, 201);
        let c = ScalarField::constant(g.clone(), 4.0);
        assert_eq!(c.gradient_central(&[50]).unwrap(), vec![0.0]);
        assert_eq!(c.upwind_derivs(&[50]).unwrap(), vec![(0.0, 0.0)]);
        let lin = ScalarField::from_fn(g.clone(), |x| 3.0 * x[0]);
        assert!((lin.gradient_central(&[17]).unwrap()[0] - 3.0).abs() < 1e-12);
        let (l, r) = lin.upwind_derivs(&[17]).unwrap()[0];
        assert!((l - 3.0).abs() < 1e-12 && (r - 3.0).abs() < 1e-12);
        let sq = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]);
        assert!((sq.gradient_central(&[100]).unwrap()[0] - 2.0).abs() < 1e-10);
        let g = line(-1.0, 1.0, 201);
        let abs = ScalarField::from_fn(g, |x| x[0].abs());
        let (l, r) = abs.upwind_derivs(&[100]).unwrap()[0];
        assert!((l + 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
        assert!(abs.gradient_central(&[201]).is_err());
    }

    #[test]
    fn boundary_derivatives_one_sided() {
        let g = line(0.0, 1.0, 11);
        let sq = ScalarField::from_fn(g, |x| x[0] * x[0]);
        let (l, r) = sq.upwind_derivs(&[0]).unwrap()[0];
        assert_eq!(l, r);
        assert!((sq.gradient_central(&[10]).unwrap()[0] - (1.0 - 0.81) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn circle_contour_near_unit_radius() {
        let g = square(161);
        let f = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] + x[1] * x[1] - 1.0);
        let c = zero_contour_2d(&f, 0.0).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].closed);
        for p in &c[0].points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 1.0).abs() < g.spacing(0));
            assert!(f.interpolate(p).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn contour_cases() {
        let g = square(41);
        let pos = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] * x[0]);
        assert!(zero_contour_2d(&pos, 0.0).unwrap().is_empty());
        let lin = ScalarField::from_fn(g.clone(), |x| x[0] + 0.01);
        let c = zero_contour_2d(&lin, 0.0).unwrap();
        assert_eq!(c.len(), 1);
        assert!(!c[0].closed);
        assert!(c[0].points.iter().all(|p| (p[0] + 0.01).abs() < 1e-12));
        assert_eq!(c[0].points.len(), 41);
        let one_d = ScalarField::constant(line(0.0, 1.0, 3), 1.0);
        assert_eq!(zero_contour_2d(&one_d, 0.0), Err(GridError::Not2d(1)));
    }

    #[test]
    fn saddle_uses_center_average() {
        let g = Grid::shared(vec![Axis::new(0.0, 1.0, 2), Axis::new(0.0, 1.0, 2)]).unwrap();
        // Corners (0,0)=+1, (1,0)=-1, (1,1)=+1, (0,1)=-1; center average 0 -> above.
        let f = ScalarField::new(g.clone(), vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let c = zero_contour_2d(&f, 0.0).unwrap();
        assert_eq!(c.len(), 2);
        for p in &c {
            assert_eq!(p.points.len(), 2);
            // Each piece cuts off a negative corner: (1,0) or (0,1).
            let m = [(p.points[0][0] + p.points[1][0]) / 2.0, (p.points[0][1] + p.points[1][1]) / 2.0];
            assert!((m[0] - 0.75).abs() < 1e-12 && (m[1] - 0.25).abs() < 1e-12
                || (m[0] - 0.25).abs() < 1e-12 && (m[1] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_distance_to_circle() {
        let g = square(201);
        let f = ScalarField::from_fn(g.clone(), |x| 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt());
        let c = zero_contour_2d(&f, 0.0).unwrap();
        let sd = signed_distance_from_contour(&c, &g, &f).unwrap();
        assert!((sd.interpolate(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-3);
        let g2 = Grid::shared(vec![Axis::new(-3.0, 3.0, 301), Axis::new(-3.0, 3.0, 301)]).unwrap();
        let sign = ScalarField::from_fn(g2.clone(), |x| 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt());
        let sd2 = signed_distance_from_contour(&c, &g2, &sign).unwrap();
        assert!((sd2.interpolate(&[2.0, 0.0]).unwrap() + 1.0).abs() < 1e-3);
        // On-contour points have |d| within one spacing.
        for p in c[0].points.iter().step_by(7) {
            assert!(sd.interpolate(p).unwrap().abs() < g.spacing(0));
        }
        assert_eq!(signed_distance_from_contour(&[], &g, &f), Err(GridError::EmptyContour));
    }

    #[test]
    fn brute_force_distance_matches_index() {
        let poly = Polyline::closed((0..200).map(|k| {
            let t = k as f64 / 200.0 * std::f64::consts::TAU;
            [1.3 * t.cos(), 0.7 * t.sin() + 0.2 * (3.0 * t).cos()]
        }).collect());
        let index = SegmentIndex::new(std::slice::from_ref(&poly)).unwrap();
        for k in 0..500 {
            let p = [((k * 37) % 101) as f64 / 25.0 - 2.0, ((k * 53) % 97) as f64 / 24.0 - 2.0];
            let brute = poly.segments().map(|(a, b)| segment_dist2(p, a, b)).fold(f64::INFINITY, f64::min).sqrt();
            assert_eq!(index.distance(p), brute);
        }
    }

    #[test]
    fn polygon_contains_and_area() {
        let sq = Polyline::closed(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert!(sq.contains([0.5, 0.5]));
        assert!(!sq.contains([1.5, 0.5]));
        assert!((sq.signed_area() - 1.0).abs() < 1e-15);
        assert!((sq.length() - 4.0).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn interpolation_is_exact_at_nodes(n1 in 2usize..12, n2 in 2usize..12, lo in -3.0..0.0f64, w in 0.5..4.0f64, seed in 0u64..1000) {
                let g = Grid::shared(vec![Axis::new(lo, lo + w, n1), Axis::new(-1.0, 2.0, n2)]).unwrap();
                let f = ScalarField::from_fn(g.clone(), |x| ((x[0] * 3.1 + seed as f64).sin() * 2.0 + x[1]).cos());
                for k in 0..g.len() {
                    prop_assert_eq!(f.interpolate(&g.point(k)).unwrap(), f.get(k));
                }
            }

            #[test]
            fn contour_distance_is_one_lipschitz(cx in -0.5..0.5f64, cy in -0.5..0.5f64, r in 0.4..1.2f64) {
                let g = square(41);
                let disk = ScalarField::from_fn(g.clone(), |x| r - ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt());
                let contour = zero_contour_2d(&disk, 0.0).unwrap();
                let d = signed_distance_from_contour(&contour, &g, &disk).unwrap();
                for k in 0..g.len() {
                    let p = g.point(k);
                    for j in (0..g.len()).step_by(7) {
                        let q = g.point(j);
                        let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                        prop_assert!((d.get(k) - d.get(j)).abs() <= dist + 1e-9);
                    }
                }
            }
        }
    }
}
