//! Discretized covariance flows: a time grid on `[0, 1]` with one covariance
//! matrix per grid point.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_traits::{Float, Zero};
use rayon::prelude::*;

use crate::error::{BwError, Result};
use crate::geometry::{self, TransportBase};
use crate::psd::{self, default_rank_tol, hermitian_residual, CovMatrix};
use crate::scalar::{Real, RealOf, Scalar};

/// Strictly increasing time points in `[0, 1]`, cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Grid<R: Real>(Arc<[R]>);

impl<R: Real> Grid<R> {
    pub fn new(points: Vec<R>) -> Result<Self> {
        check_grid(&points).map_err(BwError::InvalidGrid)?;
        Ok(Grid(points.into()))
    }

    /// `m` equispaced points from 0 to 1 (a single point sits at 0).
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(BwError::InvalidGrid("grid needs at least one point".into()));
        }
        if m == 1 {
            return Self::new(vec![R::zero()]);
        }
        let step = R::one() / R::c((m - 1) as f64);
        let mut pts: Vec<R> = (0..m).map(|j| R::c(j as f64) * step).collect();
        pts[m - 1] = R::one();
        Self::new(pts)
    }

    pub fn points(&self) -> &[R] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Same object or same values.
    pub fn same_as(&self, other: &Grid<R>) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0[..] == other.0[..]
    }

    pub fn quadrature(&self) -> Quadrature<R> {
        Quadrature::trapezoid(self)
    }

    /// Index of the grid point equal to `t`, if any.
    pub fn position(&self, t: R) -> Option<usize> {
        self.0.iter().position(|&p| p == t)
    }
}

impl<R: Real> PartialEq for Grid<R> {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

fn check_grid<R: Real>(points: &[R]) -> std::result::Result<(), String> {
    if points.is_empty() {
        return Err("grid needs at least one point".into());
    }
    for (j, &p) in points.iter().enumerate() {
        if !(p >= R::zero() && p <= R::one()) {
            return Err(format!("point {j} = {p} outside [0, 1]"));
        }
    }
    if let Some(j) = points.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(format!(
            "points {j} and {} are not strictly increasing",
            j + 1
        ));
    }
    Ok(())
}

/// Trapezoidal weights on a grid, normalized to sum to one.
///
/// For a grid spanning `[0, 1]` these are the plain trapezoid weights; for a
/// shorter span the rule averages over the covered interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature<R: Real> {
    pub weights: Vec<R>,
}

impl<R: Real> Quadrature<R> {
    pub fn trapezoid(grid: &Grid<R>) -> Self {
        let t = grid.points();
        let m = t.len();
        if m == 1 {
            return Quadrature {
                weights: vec![R::one()],
            };
        }
        let half = R::c(0.5);
        let mut w = vec![R::zero(); m];
        for j in 0..m - 1 {
            let h = (t[j + 1] - t[j]) * half;
            w[j] += h;
            w[j + 1] += h;
        }
        let span = t[m - 1] - t[0];
        w.iter_mut().for_each(|x| *x /= span);
        Quadrature { weights: w }
    }

    pub fn integrate(&self, values: &[R]) -> R {
        self.weights
            .iter()
            .zip(values)
            .fold(R::zero(), |acc, (&w, &v)| acc + w * v)
    }
}

/// A covariance flow sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow<S: Scalar> {
    grid: Grid<RealOf<S>>,
    mats: Vec<CovMatrix<S>>,
}

impl<S: Scalar> Flow<S> {
    pub fn new(grid: Grid<RealOf<S>>, mats: Vec<CovMatrix<S>>) -> Result<Self> {
        if mats.len() != grid.len() {
            return Err(BwError::InvalidGrid(format!(
                "{} matrices for {} grid points",
                mats.len(),
                grid.len()
            )));
        }
        let dim = mats[0].dim();
        if let Some(m) = mats.iter().find(|m| m.dim() != dim) {
            return Err(BwError::DimMismatch {
                left: dim,
                right: m.dim(),
            });
        }
        Ok(Flow { grid, mats })
    }

    /// The same matrix at every grid point.
    pub fn constant(grid: Grid<RealOf<S>>, mat: CovMatrix<S>) -> Self {
        let mats = vec![mat; grid.len()];
        Flow { grid, mats }
    }

    pub fn grid(&self) -> &Grid<RealOf<S>> {
        &self.grid
    }

    pub fn times(&self) -> &[RealOf<S>] {
        self.grid.points()
    }

    pub fn matrices(&self) -> &[CovMatrix<S>] {
        &self.mats
    }

    pub fn into_matrices(self) -> Vec<CovMatrix<S>> {
        self.mats
    }

    pub fn at(&self, j: usize) -> &CovMatrix<S> {
        &self.mats[j]
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].dim()
    }

    /// Rebinds the flow to an equal grid object (used to share one grid).
    pub(crate) fn with_grid(mut self, grid: Grid<RealOf<S>>) -> Self {
        debug_assert!(self.grid.same_as(&grid));
        self.grid = grid;
        self
    }
}

/// `n` flows sharing one grid and one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet<S: Scalar> {
    grid: Grid<RealOf<S>>,
    flows: Vec<Flow<S>>,
}

impl<S: Scalar> FlowSet<S> {
    pub fn new(flows: Vec<Flow<S>>) -> Result<Self> {
        let first = flows.first().ok_or(BwError::Empty("flow set"))?;
        let grid = first.grid.clone();
        let dim = first.dim();
        let mut shared = Vec::with_capacity(flows.len());
        for f in flows {
            if !f.grid.same_as(&grid) {
                return Err(BwError::GridMismatch);
            }
            if f.dim() != dim {
                return Err(BwError::DimMismatch {
                    left: dim,
                    right: f.dim(),
                });
            }
            shared.push(f.with_grid(grid.clone()));
        }
        Ok(FlowSet {
            grid,
            flows: shared,
        })
    }

    pub fn from_matrices(grid: Grid<RealOf<S>>, flows: Vec<Vec<CovMatrix<S>>>) -> Result<Self> {
        let flows = flows
            .into_iter()
            .map(|mats| Flow::new(grid.clone(), mats))
            .collect::<Result<Vec<_>>>()?;
        Self::new(flows)
    }

    pub fn grid(&self) -> &Grid<RealOf<S>> {
        &self.grid
    }

    pub fn flows(&self) -> &[Flow<S>] {
        &self.flows
    }

    pub fn into_flows(self) -> Vec<Flow<S>> {
        self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.flows[0].dim()
    }

    /// The `n` matrices observed at grid index `j`.
    pub fn slice_at(&self, j: usize) -> Vec<CovMatrix<S>> {
        self.flows.iter().map(|f| f.mats[j].clone()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.flows[i].clone()).collect())
    }

    pub fn validate(&self) -> FlowSetDiagnostics {
        let raw: Vec<Vec<DMatrix<S>>> = self
            .flows
            .iter()
            .map(|f| f.mats.iter().map(|m| m.matrix().clone()).collect())
            .collect();
        validate_raw(self.grid.points(), &raw)
    }
}

fn check_pair<S: Scalar>(a: &Flow<S>, b: &Flow<S>) -> Result<()> {
    if !a.grid.same_as(&b.grid) {
        return Err(BwError::GridMismatch);
    }
    if a.dim() != b.dim() {
        return Err(BwError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Pointwise squared distances `Pi(A_j, B_j)^2`.
pub fn pointwise_distance_sq<S: Scalar>(a: &Flow<S>, b: &Flow<S>) -> Result<Vec<RealOf<S>>> {
    check_pair(a, b)?;
    a.mats
        .iter()
        .zip(&b.mats)
        .map(|(x, y)| geometry::bw_distance_sq(x, y))
        .collect()
}

/// Squared integrated distance `int_0^1 Pi(A_t, B_t)^2 dt` (trapezoid rule).
pub fn flow_distance_sq<S: Scalar>(a: &Flow<S>, b: &Flow<S>) -> Result<RealOf<S>> {
    let d2 = pointwise_distance_sq(a, b)?;
    Ok(a.grid.quadrature().integrate(&d2))
}

/// Integrated Bures-Wasserstein distance between two flows on a shared grid.
pub fn flow_distance<S: Scalar>(a: &Flow<S>, b: &Flow<S>) -> Result<RealOf<S>> {
    Ok(Float::sqrt(flow_distance_sq(a, b)?))
}

/// Symmetric matrix of pairwise flow distances, filled in parallel.
pub fn distance_matrix<S: Scalar>(set: &FlowSet<S>) -> Result<DMatrix<RealOf<S>>> {
    let n = set.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| flow_distance(&set.flows[i], &set.flows[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// Evaluates a flow at an arbitrary time by McCann interpolation between the
/// bracketing grid points. Times outside the grid clamp to the nearest end.
pub fn mccann_eval<S: Scalar>(a: &Flow<S>, t: RealOf<S>) -> Result<CovMatrix<S>> {
    let pts = a.times();
    let m = pts.len();
    if t <= pts[0] {
        return Ok(a.mats[0].clone());
    }
    if t >= pts[m - 1] {
        return Ok(a.mats[m - 1].clone());
    }
    // first index with pts[j] > t; t is strictly inside so 1 <= j <= m-1
    let j = pts.partition_point(|&p| p <= t);
    let (t0, t1) = (pts[j - 1], pts[j]);
    if t == t0 {
        return Ok(a.mats[j - 1].clone());
    }
    let lambda = (t - t0) / (t1 - t0);
    let base = TransportBase::new(&a.mats[j - 1], default_rank_tol());
    let map = base.map_to(&a.mats[j])?;
    Ok(geometry::interpolate_with_map(&a.mats[j - 1], &map, lambda))
}

/// Re-samples a flow onto another grid with [`mccann_eval`].
pub fn resample<S: Scalar>(a: &Flow<S>, grid: &Grid<RealOf<S>>) -> Result<Flow<S>> {
    if a.grid.same_as(grid) {
        return Ok(Flow {
            grid: grid.clone(),
            mats: a.mats.clone(),
        });
    }
    let mats = grid
        .points()
        .iter()
        .map(|&t| mccann_eval(a, t))
        .collect::<Result<Vec<_>>>()?;
    Flow::new(grid.clone(), mats)
}

/// What went wrong at one `(flow, time)` cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    NonHermitian,
    NotPsd,
}

#[derive(Debug, Clone)]
pub struct PointDiagnostic {
    pub flow: usize,
    pub time: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub trace: f64,
    pub hermitian_residual: f64,
    pub violation: Option<Violation>,
}

/// Report produced by [`validate_raw`]; never mutates its input.
#[derive(Debug, Clone, Default)]
pub struct FlowSetDiagnostics {
    pub points: Vec<PointDiagnostic>,
    pub structural: Vec<String>,
}

impl FlowSetDiagnostics {
    pub fn violations(&self) -> impl Iterator<Item = &PointDiagnostic> {
        self.points.iter().filter(|p| p.violation.is_some())
    }

    pub fn is_valid(&self) -> bool {
        self.structural.is_empty() && self.violations().next().is_none()
    }

    /// One line per problem, for error messages.
    pub fn summary(&self) -> String {
        let mut lines = self.structural.clone();
        for p in self.violations() {
            lines.push(format!(
                "flow {} time {}: {:?} (min eig {:.3e}, hermitian residual {:.3e})",
                p.flow,
                p.time,
                p.violation.as_ref().unwrap(),
                p.min_eigenvalue,
                p.hermitian_residual
            ));
        }
        lines.join("\n")
    }
}

/// Checks raw matrices against the flow-set invariants: grid shape, common
/// dimension, and per-matrix finiteness, Hermitian symmetry and positivity.
pub fn validate_raw<S: Scalar>(
    grid: &[RealOf<S>],
    flows: &[Vec<DMatrix<S>>],
) -> FlowSetDiagnostics {
    let mut diag = FlowSetDiagnostics::default();
    if let Err(msg) = check_grid(grid) {
        diag.structural.push(format!("grid: {msg}"));
    }
    let dim = flows.first().and_then(|f| f.first()).map(|m| m.nrows());
    for (i, flow) in flows.iter().enumerate() {
        if flow.len() != grid.len() {
            diag.structural.push(format!(
                "flow {i}: {} matrices for {} grid points",
                flow.len(),
                grid.len()
            ));
        }
        for (j, m) in flow.iter().enumerate() {
            if !m.is_square() {
                diag.structural.push(format!(
                    "flow {i} time {j}: matrix is {}x{}",
                    m.nrows(),
                    m.ncols()
                ));
                continue;
            }
            if Some(m.nrows()) != dim {
                diag.structural.push(format!(
                    "flow {i} time {j}: dimension {} differs from {}",
                    m.nrows(),
                    dim.unwrap_or(0)
                ));
                continue;
            }
            diag.points.push(check_point(i, j, m));
        }
    }
    diag
}

fn check_point<S: Scalar>(flow: usize, time: usize, m: &DMatrix<S>) -> PointDiagnostic {
    let mut out = PointDiagnostic {
        flow,
        time,
        min_eigenvalue: f64::NAN,
        max_eigenvalue: f64::NAN,
        trace: f64::NAN,
        hermitian_residual: f64::NAN,
        violation: None,
    };
    if !m.iter().all(|x| x.is_finite_scalar()) {
        out.violation = Some(Violation::NonFinite);
        return out;
    }
    let resid = hermitian_residual(m);
    out.hermitian_residual = resid.to_f64_lossy();
    out.trace = m
        .diagonal()
        .iter()
        .map(|x| x.parts().0.to_f64_lossy())
        .sum();
    let eig = psd::eig_unchecked(m);
    if !eig.values.is_empty() {
        out.max_eigenvalue = eig.values[0].to_f64_lossy();
        out.min_eigenvalue = eig.values[eig.values.len() - 1].to_f64_lossy();
    }
    if resid > psd::hermitian_tol() {
        out.violation = Some(Violation::NonHermitian);
    } else if !eig.values.is_empty() {
        let max = Float::max(eig.values[0], RealOf::<S>::zero());
        if eig.values[eig.values.len() - 1] < -RealOf::<S>::psd_tol() * max {
            out.violation = Some(Violation::NotPsd);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_pd;
    use crate::testutil::*;

    fn scalar(v: f64) -> CovMatrix<f64> {
        CovMatrix::from_diagonal(&[v]).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::<f64>::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(Grid::<f64>::new(vec![0.0, 1.5]).is_err());
        assert!(Grid::<f64>::new(vec![]).is_err());
        let g = Grid::<f64>::uniform(5).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn trapezoid_weights() {
        let q = Grid::<f64>::uniform(11).unwrap().quadrature();
        assert_close(q.weights.iter().sum(), 1.0, 1e-14);
        assert_close(q.weights[0], 1.0 / 20.0, 1e-15);
        assert_close(q.weights[5], 1.0 / 10.0, 1e-15);
        assert_close(q.weights[10], 1.0 / 20.0, 1e-15);
        let q = Grid::<f64>::new(vec![0.3]).unwrap().quadrature();
        assert_eq!(q.weights, vec![1.0]);
    }

    #[test]
    fn distance_of_constant_flows() {
        let g = Grid::uniform(7).unwrap();
        let a = Flow::constant(g.clone(), scalar(4.0));
        let b = Flow::constant(g.clone(), scalar(9.0));
        assert_close(flow_distance(&a, &b).unwrap(), 1.0, 1e-12);
        assert_eq!(flow_distance(&a, &a).unwrap(), 0.0);
        let c = Flow::constant(Grid::uniform(5).unwrap(), scalar(1.0));
        assert!(matches!(flow_distance(&a, &c), Err(BwError::GridMismatch)));
    }

    #[test]
    fn mccann_examples() {
        let g = Grid::new(vec![0.0, 1.0]).unwrap();
        let a = Flow::new(g, vec![scalar(1.0), scalar(9.0)]).unwrap();
        assert_close(mccann_eval(&a, 0.5).unwrap().matrix()[(0, 0)], 4.0, 1e-12);
        assert_eq!(mccann_eval(&a, 0.0).unwrap(), scalar(1.0));
        assert_eq!(mccann_eval(&a, 1.0).unwrap(), scalar(9.0));
        // clamped outside the grid
        let inner = Flow::new(
            Grid::new(vec![0.2, 0.8]).unwrap(),
            vec![scalar(1.0), scalar(9.0)],
        )
        .unwrap();
        assert_eq!(mccann_eval(&inner, 0.1).unwrap(), scalar(1.0));
        assert_eq!(mccann_eval(&inner, 0.95).unwrap(), scalar(9.0));
    }

    #[test]
    fn mccann_reproduces_geodesics() {
        let mut rng = seeded(21);
        let f0: CovMatrix<f64> = random_pd(&mut rng, 4);
        let f1: CovMatrix<f64> = random_pd(&mut rng, 4);
        let g = Grid::uniform(3).unwrap();
        let mats = g
            .points()
            .iter()
            .map(|&t| geometry::geodesic(&f0, &f1, t).unwrap())
            .collect();
        let flow = Flow::new(g, mats).unwrap();
        for k in 0..50 {
            let t = (k as f64 + 0.37) / 50.0;
            let got = mccann_eval(&flow, t).unwrap();
            let want = geometry::geodesic(&f0, &f1, t).unwrap();
            assert!((got.matrix() - want.matrix()).norm() < 1e-8, "t = {t}");
        }
        let again = resample(&flow, &Grid::new(flow.times().to_vec()).unwrap()).unwrap();
        assert_eq!(again.matrices(), flow.matrices());
    }

    #[test]
    fn diagnostics_flag_problems() {
        let grid = vec![0.0, 1.0];
        let good = DMatrix::<f64>::identity(2, 2);
        let mut bad = DMatrix::<f64>::identity(2, 2);
        bad[(1, 1)] = -1e-3;
        let d = validate_raw(
            &grid,
            &[vec![good.clone(), good.clone()], vec![good.clone(), bad]],
        );
        let v: Vec<_> = d.violations().collect();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].flow, v[0].time), (1, 1));
        assert_eq!(v[0].violation, Some(Violation::NotPsd));

        let d = validate_raw(
            &grid,
            &[
                vec![good.clone(), good.clone()],
                vec![good.clone(), DMatrix::identity(3, 3)],
            ],
        );
        assert_eq!(d.structural.len(), 1);
        assert!(!d.is_valid());

        let d = validate_raw(&grid, &[vec![good.clone(), good]]);
        assert!(d.is_valid());
    }

    #[test]
    fn flowset_shares_grid() {
        let g1 = Grid::<f64>::uniform(3).unwrap();
        let g2 = Grid::<f64>::uniform(3).unwrap();
        let a = Flow::constant(g1, scalar(1.0));
        let b = Flow::constant(g2, scalar(2.0));
        let set = FlowSet::new(vec![a, b]).unwrap();
        assert!(Arc::ptr_eq(
            &set.flows()[0].grid().0,
            &set.flows()[1].grid().0
        ));
        let c = Flow::constant(Grid::uniform(4).unwrap(), scalar(1.0));
        assert!(matches!(
            FlowSet::new(vec![set.flows()[0].clone(), c]),
            Err(BwError::GridMismatch)
        ));
    }
}
