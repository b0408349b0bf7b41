//! Set-level and function-level verification of computed value functions:
//! fixed-point checks of the reachable tube, barrier-constraint residuals,
//! barrier-function validation, inverse optimality and empirical
//! contraction of the Bellman backup.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::ControlAffineSystem;
use crate::grid::{Grid, ScalarField, MAX_DIM};
use crate::par;
use crate::solver::{levelset_solve_frt, BellmanOperator, Formulation, SolveError, SolveParams, SolveReport};
use crate::targets::{AnalyticFn, BarrierFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("inputs live on different grids")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("the set is empty")]
    EmptySet,
    #[error("h is not a valid barrier function: {violations} violating points (worst residual {worst})")]
    NotBarrier { violations: usize, worst: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Grid membership of `{V > eps}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetIndicator {
    grid: Arc<Grid>,
    members: Vec<bool>,
    eps: f64,
}

impl SetIndicator {
    pub fn new(grid: Arc<Grid>, members: Vec<bool>, eps: f64) -> Result<Self, AnalysisError> {
        if members.len() != grid.len() {
            return Err(AnalysisError::InvalidArgument(format!(
                "membership has {} entries, grid has {}",
                members.len(),
                grid.len()
            )));
        }
        Ok(SetIndicator { grid, members, eps })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members[k]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Member nodes with at least one non-member axis neighbor.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let g = &self.grid;
        (0..g.len())
            .filter(|&k| self.members[k])
            .filter(|&k| {
                let idx = g.unravel(k);
                (0..g.ndim()).any(|d| {
                    [false, true].into_iter().any(|fwd| g.neighbor(k, idx[d], d, fwd).is_some_and(|j| !self.members[j]))
                })
            })
            .collect()
    }

    fn same_grid(&self, other: &SetIndicator) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

/// `{V > eps}` (strict).
pub fn superlevel(v: &ScalarField, eps: f64) -> Result<SetIndicator, AnalysisError> {
    if !(eps >= 0.0) {
        return Err(AnalysisError::InvalidArgument(format!("eps must be non-negative, got {eps}")));
    }
    Ok(SetIndicator { grid: v.grid().clone(), members: v.values().iter().map(|&x| x > eps).collect(), eps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    pub jaccard: f64,
    /// `|A \ B| / |A u B|`
    pub a_minus_b_fraction: f64,
    /// `|B \ A| / |A u B|`
    pub b_minus_a_fraction: f64,
    /// Largest distance from a point of the symmetric difference to the
    /// boundary nodes of the set it is missing from.
    pub grid_hausdorff: f64,
}

/// Cell-counting comparison of two sets on the same grid.
pub fn set_metrics(a: &SetIndicator, b: &SetIndicator) -> Result<SetMetrics, AnalysisError> {
    if !a.same_grid(b) {
        return Err(AnalysisError::GridMismatch);
    }
    let (mut both, mut a_only, mut b_only) = (0usize, Vec::new(), Vec::new());
    for k in 0..a.members.len() {
        match (a.members[k], b.members[k]) {
            (true, true) => both += 1,
            (true, false) => a_only.push(k),
            (false, true) => b_only.push(k),
            _ => {}
        }
    }
    let union = both + a_only.len() + b_only.len();
    if union == 0 {
        return Ok(SetMetrics { jaccard: 1.0, a_minus_b_fraction: 0.0, b_minus_a_fraction: 0.0, grid_hausdorff: 0.0 });
    }
    let g = &a.grid;
    let diameter = g.axes().iter().map(|ax| ax.extent().powi(2)).sum::<f64>().sqrt();
    let farthest = |points: &[usize], other: &SetIndicator| -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let boundary: Vec<Vec<f64>> = other.boundary_nodes().into_iter().map(|k| g.point(k)).collect();
        if boundary.is_empty() {
            return diameter;
        }
        par::map(points, |&k| {
            let x = g.point(k);
            boundary
                .iter()
                .map(|y| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .into_iter()
        .fold(0.0, f64::max)
    };
    let hausdorff = farthest(&a_only, b).max(farthest(&b_only, a));
    let u = union as f64;
    Ok(SetMetrics {
        jaccard: both as f64 / u,
        a_minus_b_fraction: a_only.len() as f64 / u,
        b_minus_a_fraction: b_only.len() as f64 / u,
        grid_hausdorff: hausdorff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    FixedPoint,
    StrictSuperset,
    Other,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::FixedPoint => "fixed_point",
            Verdict::StrictSuperset => "strict_superset",
            Verdict::Other => "other",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const FIXED_POINT_JACCARD: f64 = 0.97;
pub const FIXED_POINT_ONE_SIDED: f64 = 0.03;
pub const SUPERSET_CONTAINMENT: f64 = 0.01;
pub const SUPERSET_GROWTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResult {
    pub metrics: SetMetrics,
    pub verdict: Verdict,
}

/// Compares a set `S` with the computed tube `{V > eps}`.
pub fn fixed_point_check(s: &SetIndicator, v: &ScalarField, eps: f64) -> Result<FixedPointResult, AnalysisError> {
    let tube = superlevel(v, eps)?;
    let m = set_metrics(s, &tube)?;
    let verdict = if m.jaccard >= FIXED_POINT_JACCARD
        && m.a_minus_b_fraction <= FIXED_POINT_ONE_SIDED
        && m.b_minus_a_fraction <= FIXED_POINT_ONE_SIDED
    {
        Verdict::FixedPoint
    } else if m.a_minus_b_fraction <= SUPERSET_CONTAINMENT && m.b_minus_a_fraction > SUPERSET_GROWTH {
        Verdict::StrictSuperset
    } else {
        Verdict::Other
    };
    Ok(FixedPointResult { metrics: m, verdict })
}

/// Barrier-constraint residual `max_u min_d grad V . f + gamma V` on a region.
#[derive(Debug, Clone)]
pub struct BarrierResidual {
    /// Residual at evaluated nodes, 0 elsewhere.
    pub residual: ScalarField,
    pub evaluated: Vec<bool>,
    /// Evaluated nodes where the one-sided and central residuals disagree by
    /// more than ten times the tolerance.
    pub suspected_kink: Vec<bool>,
    pub tolerance: f64,
    pub min_residual: f64,
    pub violations: usize,
}

impl BarrierResidual {
    pub fn evaluated_count(&self) -> usize {
        self.evaluated.iter().filter(|&&e| e).count()
    }

    pub fn kink_count(&self) -> usize {
        self.suspected_kink.iter().filter(|&&e| e).count()
    }

    /// Worst residual away from suspected kinks.
    pub fn min_residual_smooth(&self) -> f64 {
        (0..self.evaluated.len())
            .filter(|&k| self.evaluated[k] && !self.suspected_kink[k])
            .map(|k| self.residual.get(k))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates the barrier constraint with central gradients on the region
/// nodes at least two cells from every non-periodic boundary.
pub fn barrier_residual(
    v: &ScalarField,
    system: &ControlAffineSystem,
    gamma: f64,
    region: &SetIndicator,
    tol: f64,
) -> Result<BarrierResidual, AnalysisError> {
    let g = v.grid();
    if region.grid.as_ref() != g.as_ref() {
        return Err(AnalysisError::GridMismatch);
    }
    if g.ndim() != system.state_dim() {
        return Err(AnalysisError::InvalidArgument("system and grid dimensions differ".into()));
    }
    let n = g.ndim();
    let evaluated: Vec<bool> = (0..g.len()).map(|k| region.members[k] && g.is_interior(k, 2)).collect();
    let mut kink_values = vec![0.0; g.len()];
    let mut values = vec![0.0; g.len()];
    let eval = |k: usize| -> (f64, f64) {
        if !evaluated[k] {
            return (0.0, 0.0);
        }
        let idx = g.unravel(k);
        let x = g.point(k);
        let mut p = [0.0; MAX_DIM];
        let mut pl = [0.0; MAX_DIM];
        let mut pr = [0.0; MAX_DIM];
        for d in 0..n {
            p[d] = v.central_diff(k, idx[d], d);
            let (l, r) = v.one_sided(k, idx[d], d);
            pl[d] = l;
            pr[d] = r;
        }
        let gv = gamma * v.get(k);
        let central = system.hamiltonian_value(&x, &p[..n]) + gv;
        let hc = central - gv;
        let hl = system.hamiltonian_value(&x, &pl[..n]);
        let hr = system.hamiltonian_value(&x, &pr[..n]);
        let spread = (hl - hr).abs().max((hl - hc).abs()).max((hr - hc).abs());
        (central, spread)
    };
    par::fill(&mut values, |k| eval(k).0);
    par::fill(&mut kink_values, |k| eval(k).1);
    let suspected_kink: Vec<bool> = kink_values.iter().map(|&s| s > 10.0 * tol).collect();
    let min_residual = (0..g.len()).filter(|&k| evaluated[k]).map(|k| values[k]).fold(f64::INFINITY, f64::min);
    let violations = (0..g.len()).filter(|&k| evaluated[k] && values[k] < -tol).count();
    Ok(BarrierResidual {
        residual: ScalarField::new(g.clone(), values).map_err(|_| AnalysisError::GridMismatch)?,
        evaluated,
        suspected_kink,
        tolerance: tol,
        min_residual,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbfReport {
    pub valid: bool,
    pub violations: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub min_residual: f64,
    pub checked: usize,
}

/// Checks `max_u min_d grad h . f + gamma h >= -tol` on the nodes of `S`
/// at least two cells from every non-periodic boundary.
pub fn cbf_validate(
    h: &BarrierFunction,
    system: &ControlAffineSystem,
    gamma: f64,
    s: &SetIndicator,
    tol: f64,
) -> Result<CbfReport, AnalysisError> {
    if s.is_empty() {
        return Err(AnalysisError::EmptySet);
    }
    let g = &s.grid;
    let nodes: Vec<usize> = (0..g.len()).filter(|&k| s.members[k] && g.is_interior(k, 2)).collect();
    if nodes.is_empty() {
        return Err(AnalysisError::EmptySet);
    }
    let residuals = par::map(&nodes, |&k| {
        let x = g.point(k);
        h.tangential_residual(system, &x) + gamma * h.value(&x)
    });
    let violations: Vec<Vec<f64>> =
        nodes.iter().zip(&residuals).filter(|(_, &r)| r < -tol).map(|(&k, _)| g.point(k)).collect();
    let min_residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CbfReport { valid: violations.is_empty(), violations, residuals, min_residual, checked: nodes.len() })
}

#[derive(Debug, Clone)]
pub struct InverseOptimality {
    pub linf_error: f64,
    pub report: SolveReport,
}

/// Solves for the value function with target `h` and measures its distance
/// to `max{0, h}`, which is exact when `h` is a valid barrier function.
pub fn inverse_optimality_check(
    h: &AnalyticFn,
    system: &ControlAffineSystem,
    grid: &Arc<Grid>,
    params: &SolveParams,
) -> Result<InverseOptimality, AnalysisError> {
    let target = ScalarField::from_fn(grid.clone(), |x| h.value(x));
    let cbf = BarrierFunction::analytic(h.clone());
    let set = SetIndicator::new(grid.clone(), target.values().iter().map(|&v| v >= 0.0).collect(), 0.0)?;
    if !set.is_empty() {
        let check = cbf_validate(&cbf, system, params.gamma, &set, 1e-9)?;
        if !check.valid {
            return Err(AnalysisError::NotBarrier { violations: check.violations.len(), worst: check.min_residual });
        }
    }
    let report = levelset_solve_frt(system, &target, params)?;
    let linf_error = report
        .value
        .values()
        .iter()
        .zip(target.values())
        .map(|(v, h)| (v - h.max(0.0)).abs())
        .fold(0.0, f64::max);
    Ok(InverseOptimality { linf_error, report })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionResult {
    pub max_ratio: f64,
    pub bound: f64,
    pub trials: usize,
}

/// Empirical contraction ratio `||B V1 - B V2|| / ||V1 - V2||` of the
/// forward-tube backup over random smoothed field pairs.
pub fn contraction_test(
    system: &ControlAffineSystem,
    target: &ScalarField,
    gamma: f64,
    dt: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ContractionResult, AnalysisError> {
    if !(gamma > 0.0) {
        return Err(AnalysisError::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if n_trials < 10 {
        return Err(AnalysisError::InvalidArgument(format!("need at least 10 trials, got {n_trials}")));
    }
    let params = SolveParams::with_gamma(gamma);
    let op = BellmanOperator::new(Formulation::FrtDiscount, system, target, &params, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (target.min(), target.max());
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let mut max_ratio: f64 = 0.0;
    for _ in 0..n_trials {
        let a = random_field(target.grid(), lo, hi, &mut rng);
        let b = random_field(target.grid(), lo, hi, &mut rng);
        max_ratio = max_ratio.max(contraction_ratio(&op, &a, &b)?);
    }
    Ok(ContractionResult { max_ratio, bound: op.factor(), trials: n_trials })
}

/// Ratio for one pair; identical fields give 0.
pub fn contraction_ratio(op: &BellmanOperator, a: &ScalarField, b: &ScalarField) -> Result<f64, AnalysisError> {
    let den = a.linf_distance(b).map_err(|_| AnalysisError::GridMismatch)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    let num = op.apply(a)?.linf_distance(&op.apply(b)?).map_err(|_| AnalysisError::GridMismatch)?;
    Ok(num / den)
}

/// Uniform noise in `[lo, hi]` followed by one pass of neighbor averaging.
fn random_field(grid: &Arc<Grid>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let raw: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(lo..=hi)).collect();
    let smoothed = (0..grid.len())
        .map(|k| {
            let idx = grid.unravel(k);
            let mut sum = raw[k];
            let mut count = 1.0;
            for d in 0..grid.ndim() {
                for fwd in [false, true] {
                    if let Some(j) = grid.neighbor(k, idx[d], d, fwd) {
                        sum += raw[j];
                        count += 1.0;
                    }
                }
            }
            0.5 * raw[k] + 0.5 * sum / count
        })
        .collect();
    ScalarField::new(grid.clone(), smoothed).expect("length matches grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::targets::{build_target, TargetSpec};
    use proptest::prelude::*;

    fn square(n: usize) -> Arc<Grid> {
        Grid::shared(vec![Axis::new(-2.0, 2.0, n), Axis::new(-2.0, 2.0, n)]).unwrap()
    }

    fn disk(g: &Arc<Grid>, r: f64) -> SetIndicator {
        superlevel(&ScalarField::from_fn(g.clone(), |x| r - x[0].hypot(x[1])), 0.0).unwrap()
    }

    #[test]
    fn superlevel_basics() {
        let g = square(11);
        assert_eq!(superlevel(&ScalarField::constant(g.clone(), 1.0), 0.0).unwrap().count(), g.len());
        assert!(superlevel(&ScalarField::constant(g.clone(), 0.0), 0.0).unwrap().is_empty());
        assert!(superlevel(&ScalarField::constant(g, 0.0), -1.0).is_err());
    }

    #[test]
    fn metrics_examples() {
        let g = square(401);
        let a = disk(&g, 1.0);
        let m = set_metrics(&a, &a).unwrap();
        assert_eq!((m.jaccard, m.a_minus_b_fraction, m.b_minus_a_fraction), (1.0, 0.0, 0.0));
        let far = superlevel(&ScalarField::from_fn(g.clone(), |x| 0.5 - (x[0] - 1.4).hypot(x[1] - 1.4)), 0.0).unwrap();
        let small = disk(&g, 0.5);
        assert_eq!(set_metrics(&small, &far).unwrap().jaccard, 0.0);
        let b = disk(&g, 1.1);
        let m = set_metrics(&a, &b).unwrap();
        assert!((m.jaccard - 1.0 / 1.21).abs() < 0.01, "{}", m.jaccard);
        assert!(m.a_minus_b_fraction == 0.0 && m.b_minus_a_fraction > 0.1);
        assert!(m.grid_hausdorff > 0.05 && m.grid_hausdorff < 0.12, "{}", m.grid_hausdorff);
        let empty = superlevel(&ScalarField::constant(g.clone(), -1.0), 0.0).unwrap();
        assert_eq!(set_metrics(&empty, &empty).unwrap().jaccard, 1.0);
        let other = superlevel(&ScalarField::constant(square(5), 1.0), 0.0).unwrap();
        assert_eq!(set_metrics(&a, &other), Err(AnalysisError::GridMismatch));
    }

    #[test]
    fn fixed_point_verdicts() {
        let g = square(201);
        let s = disk(&g, 1.0);
        let same = ScalarField::from_fn(g.clone(), |x| 1.0 - x[0].hypot(x[1]));
        assert_eq!(fixed_point_check(&s, &same, 0.0).unwrap().verdict, Verdict::FixedPoint);
        let bigger = ScalarField::from_fn(g.clone(), |x| 1.3 - x[0].hypot(x[1]));
        assert_eq!(fixed_point_check(&s, &bigger, 0.0).unwrap().verdict, Verdict::StrictSuperset);
        let shifted = ScalarField::from_fn(g.clone(), |x| 1.0 - (x[0] - 0.5).hypot(x[1]));
        assert_eq!(fixed_point_check(&s, &shifted, 0.0).unwrap().verdict, Verdict::Other);
    }

    #[test]
    fn barrier_residual_examples() {
        let g = Grid::shared(vec![Axis::new(-2.0, 2.0, 401)]).unwrap();
        let sys = ControlAffineSystem::by_name("single_integrator1d").unwrap();
        let v = ScalarField::from_fn(g.clone(), |x| (1.0 - x[0] * x[0]).max(0.0));
        let region = superlevel(&v, 0.0).unwrap();
        let rep = barrier_residual(&v, &sys, 4.0, &region, 1e-2).unwrap();
        assert!((rep.residual.get(200) - 4.0).abs() < 1e-9);
        assert!(rep.min_residual >= -1e-9);
        let zero = ScalarField::constant(g.clone(), 0.0);
        let all = superlevel(&ScalarField::constant(g.clone(), 1.0), 0.0).unwrap();
        let rep = barrier_residual(&zero, &sys, 4.0, &all, 1e-2).unwrap();
        assert_eq!(rep.min_residual, 0.0);
        assert_eq!(rep.evaluated_count(), g.len() - 4);
        // A kink at the origin of |x| shows up as one-sided disagreement.
        let vee = ScalarField::from_fn(g.clone(), |x| 1.0 - x[0].abs());
        let rep = barrier_residual(&vee, &sys, 4.0, &superlevel(&vee, 0.0).unwrap(), 1e-2).unwrap();
        assert!(rep.suspected_kink[200]);
        assert_eq!(rep.kink_count(), 1);
    }

    #[test]
    fn cbf_validation() {
        let g = Grid::shared(vec![Axis::new(-2.0, 2.0, 401)]).unwrap();
        let sys = ControlAffineSystem::by_name("single_integrator1d").unwrap();
        let h = AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0] };
        let s = superlevel(&ScalarField::from_fn(g.clone(), |x| h.value(x)), 0.0).unwrap();
        assert!(cbf_validate(&BarrierFunction::analytic(h.clone()), &sys, 4.0, &s, 0.0).unwrap().valid);
        // With no control authority the decay term cannot be compensated.
        let int = ControlAffineSystem::by_name("integrator1d").unwrap();
        let drift_only =
            int.with_boxes(crate::dynamics::BoxSet::singleton(vec![0.0]), crate::dynamics::BoxSet::empty()).unwrap();
        let rep = cbf_validate(&BarrierFunction::analytic(h), &drift_only, 0.5, &s, 0.0).unwrap();
        assert!(!rep.valid && !rep.violations.is_empty());
        let empty = superlevel(&ScalarField::constant(g, -1.0), 0.0).unwrap();
        assert_eq!(
            cbf_validate(&BarrierFunction::analytic(AnalyticFn::Affine { offset: 0.0, coeffs: vec![1.0] }), &sys, 1.0, &empty, 0.0)
                .unwrap_err(),
            AnalysisError::EmptySet
        );
    }

    #[test]
    fn inverse_optimality_examples() {
        let g = Grid::shared(vec![Axis::new(-2.0, 2.0, 401)]).unwrap();
        let sys = ControlAffineSystem::by_name("single_integrator1d").unwrap();
        let h = AnalyticFn::Quadratic { peak: 1.0, center: vec![0.0] };
        let out = inverse_optimality_check(&h, &sys, &g, &SolveParams::with_gamma(4.0)).unwrap();
        assert!(out.linf_error <= 3.0 * g.spacing(0), "{}", out.linf_error);
        let neg = AnalyticFn::Quadratic { peak: -0.5, center: vec![0.0] };
        let out = inverse_optimality_check(&neg, &sys, &g, &SolveParams::with_gamma(4.0)).unwrap();
        assert!(out.linf_error <= 3.0 * g.spacing(0));
    }

    #[test]
    fn contraction_examples() {
        let g = Grid::shared(vec![Axis::new(0.0, 6.0, 601)]).unwrap();
        let t = build_target(&TargetSpec::ramp_1d(), &g).unwrap();
        let sys = ControlAffineSystem::by_name("integrator1d").unwrap();
        let res = contraction_test(&sys, &t, 2.0, 0.004, 10, 3).unwrap();
        assert!(res.max_ratio <= (-2.0f64 * 0.004).exp() + 1e-3, "{}", res.max_ratio);
        assert!(res.max_ratio > 0.5);
        let op = BellmanOperator::new(Formulation::FrtDiscount, &sys, &t, &SolveParams::with_gamma(2.0), 0.004).unwrap();
        assert_eq!(contraction_ratio(&op, &t, &t).unwrap(), 0.0);
        assert!(contraction_test(&sys, &t, 0.0, 0.004, 10, 3).is_err());
        assert!(contraction_test(&sys, &t, 2.0, 0.004, 5, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn superlevel_monotone_in_eps(e1 in 0.0..1.0f64, e2 in 0.0..1.0f64, seed in 0u64..1000) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let g = Grid::shared(vec![Axis::new(0.0, 1.0, 64)]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_field(&g, -1.0, 1.0, &mut rng);
            let a = superlevel(&v, lo).unwrap();
            let b = superlevel(&v, hi).unwrap();
            prop_assert!((0..g.len()).all(|k| !b.contains(k) || a.contains(k)));
        }

        #[test]
        fn metric_fractions_in_unit_interval(seed in 0u64..1000) {
            let g = Grid::shared(vec![Axis::new(0.0, 1.0, 16), Axis::new(0.0, 1.0, 16)]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = superlevel(&random_field(&g, -1.0, 1.0, &mut rng), 0.0).unwrap();
            let b = superlevel(&random_field(&g, -1.0, 1.0, &mut rng), 0.0).unwrap();
            let m = set_metrics(&a, &b).unwrap();
            for f in [m.jaccard, m.a_minus_b_fraction, m.b_minus_a_fraction] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
            prop_assert!((m.jaccard + m.a_minus_b_fraction + m.b_minus_a_fraction - 1.0).abs() < 1e-12);
        }
    }
}
