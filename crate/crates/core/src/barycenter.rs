//! Fréchet means of covariance matrices and of covariance flows.
//!
//! Gradient descent iterates `M <- T M T` with `T` the average of the optimal
//! maps out of `M`; stochastic descent moves along the geodesic towards one
//! sample per step.

use std::io::Write;

use nalgebra::DMatrix;
use num_traits::{Float, One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BwError, Result};
use crate::flow::{Flow, FlowSet};
use crate::geometry::TransportBase;
use crate::psd::{self, default_rank_tol, CovMatrix};
use crate::scalar::{Real, RealOf, Scalar};

/// Starting point for gradient descent.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init<S: Scalar> {
    #[default]
    EuclideanMean,
    Index(usize),
    Explicit(CovMatrix<S>),
}

#[derive(Debug, Clone)]
pub struct GdConfig<S: Scalar> {
    pub max_iter: usize,
    /// Stop once `||T_k - I||_op <= tol`, measured on the range of the iterate.
    pub tol: f64,
    pub init: Init<S>,
}

impl<S: Scalar> Default for GdConfig<S> {
    fn default() -> Self {
        GdConfig {
            max_iter: 200,
            tol: 1e-8,
            init: Init::EuclideanMean,
        }
    }
}

impl<S: Scalar> GdConfig<S> {
    fn check(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(BwError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(BwError::InvalidConfig("tol must be positive".into()));
        }
        Ok(())
    }
}

/// How the stochastic iteration draws its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A fresh random permutation of the samples every pass.
    #[default]
    Reshuffle,
    /// Independent uniform draws.
    WithReplacement,
}

/// Step sizes `a / (k + b)` for `k = 0, 1, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub steps: usize,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            steps: 5000,
            a: 2.0,
            b: 2.0,
            seed: 0,
            sampling: Sampling::Reshuffle,
        }
    }
}

impl SgdConfig {
    pub fn step_size(&self, k: usize) -> f64 {
        self.a / (k as f64 + self.b)
    }

    fn check(&self) -> Result<()> {
        // a/(k+b) is decreasing in k, so checking k = 0 covers every step
        let first = self.step_size(0);
        if !(self.a > 0.0 && self.b > 0.0 && first <= 1.0) {
            return Err(BwError::InvalidConfig(format!(
                "step sizes a/(k+b) must lie in (0, 1]; got a = {}, b = {}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Weighted Fréchet functional at the iterate.
    pub functional: f64,
    /// `||P (T_k - I) P||_op` with `P` the range projector of the iterate.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GdResult<S: Scalar> {
    pub mean: CovMatrix<S>,
    pub trace: ConvergenceTrace,
}

fn check_samples<S: Scalar>(samples: &[CovMatrix<S>]) -> Result<usize> {
    let first = samples.first().ok_or(BwError::Empty("samples"))?;
    let dim = first.dim();
    if let Some(s) = samples.iter().find(|s| s.dim() != dim) {
        return Err(BwError::DimMismatch {
            left: dim,
            right: s.dim(),
        });
    }
    Ok(dim)
}

fn weighted_euclidean_mean<S: Scalar>(
    samples: &[CovMatrix<S>],
    weights: &[RealOf<S>],
) -> CovMatrix<S> {
    let n = samples[0].dim();
    let zero = RealOf::<S>::zero();
    let total = weights
        .iter()
        .fold(zero, |acc, &w| acc + Float::max(w, zero));
    let mut acc = DMatrix::<S>::zeros(n, n);
    for (s, &w) in samples.iter().zip(weights) {
        if w > zero {
            acc += s.matrix() * S::from_real(w / total);
        }
    }
    CovMatrix::from_congruence(acc)
}

/// Euclidean average of the samples.
pub fn euclidean_mean<S: Scalar>(samples: &[CovMatrix<S>]) -> Result<CovMatrix<S>> {
    check_samples(samples)?;
    let w = vec![RealOf::<S>::one(); samples.len()];
    Ok(weighted_euclidean_mean(samples, &w))
}

fn resolve_init<S: Scalar>(
    samples: &[CovMatrix<S>],
    weights: &[RealOf<S>],
    init: &Init<S>,
) -> Result<CovMatrix<S>> {
    let tol = default_rank_tol::<RealOf<S>>();
    let chosen = match init {
        Init::EuclideanMean => None,
        Init::Index(k) => Some(samples.get(*k).cloned().ok_or_else(|| {
            BwError::InvalidConfig(format!(
                "init index {k} out of range for {} samples",
                samples.len()
            ))
        })?),
        Init::Explicit(m) => {
            if m.dim() != samples[0].dim() {
                return Err(BwError::DimMismatch {
                    left: samples[0].dim(),
                    right: m.dim(),
                });
            }
            Some(m.clone())
        }
    };
    if let Some(m) = chosen {
        if m.is_positive_definite(tol) {
            return Ok(m);
        }
    }
    // a singular starting point cannot reach samples outside its range
    let avg = weighted_euclidean_mean(samples, weights);
    if avg.is_positive_definite(tol) {
        Ok(avg)
    } else {
        Err(BwError::AllDegenerate)
    }
}

/// Fréchet mean by gradient descent.
pub fn frechet_mean_gd<S: Scalar>(
    samples: &[CovMatrix<S>],
    cfg: &GdConfig<S>,
) -> Result<GdResult<S>> {
    check_samples(samples)?;
    let w = vec![RealOf::<S>::one() / RealOf::<S>::c(samples.len() as f64); samples.len()];
    gd_loop(samples, &w, cfg, false)
}

/// Weighted Fréchet mean by gradient descent with weights summing to one.
///
/// Weights may be negative. The iteration fails with [`BwError::NotPsd`] if
/// the weighted average of maps leaves the positive semidefinite cone.
pub fn weighted_frechet_mean_gd<S: Scalar>(
    samples: &[CovMatrix<S>],
    weights: &[RealOf<S>],
    cfg: &GdConfig<S>,
) -> Result<GdResult<S>> {
    check_samples(samples)?;
    if weights.len() != samples.len() {
        return Err(BwError::DimMismatch {
            left: samples.len(),
            right: weights.len(),
        });
    }
    gd_loop(samples, weights, cfg, true)
}

fn gd_loop<S: Scalar>(
    samples: &[CovMatrix<S>],
    weights: &[RealOf<S>],
    cfg: &GdConfig<S>,
    check_cone: bool,
) -> Result<GdResult<S>> {
    cfg.check()?;
    let n = samples[0].dim();
    let tol = RealOf::<S>::c(cfg.tol);
    let mut m = resolve_init(samples, weights, &cfg.init)?;
    let roots: Vec<DMatrix<S>> = samples
        .iter()
        .map(|s| psd::sqrt_psd(s).into_matrix())
        .collect();
    let mut trace = ConvergenceTrace::default();
    for iteration in 0..cfg.max_iter {
        let base = TransportBase::new(&m, default_rank_tol());
        let mut t = DMatrix::<S>::zeros(n, n);
        let mut functional = RealOf::<S>::zero();
        for ((s, root), &w) in samples.iter().zip(&roots).zip(weights) {
            if w.is_zero() {
                continue;
            }
            let (map, d2) = base.map_and_distance_sq_with_sqrt(s, root)?;
            t += map * S::from_real(w);
            functional += w * d2;
        }
        if check_cone {
            let eig = psd::hermitian_eig(&t)?;
            let lo = eig.values[eig.values.len() - 1];
            if lo < -RealOf::<S>::psd_tol() * Float::max(eig.max_value(), RealOf::<S>::zero()) {
                return Err(BwError::NotPsd {
                    min_eig: lo.to_f64_lossy(),
                    max_eig: eig.max_value().to_f64_lossy(),
                });
            }
        }
        let residual = base.range_residual(&t);
        trace.records.push(TraceRecord {
            iteration,
            functional: functional.to_f64_lossy(),
            residual: residual.to_f64_lossy(),
        });
        if residual <= tol {
            trace.converged = true;
            break;
        }
        m = CovMatrix::from_congruence(&t * m.matrix() * &t);
    }
    Ok(GdResult { mean: m, trace })
}

/// Fréchet mean by stochastic gradient descent.
///
/// Each step moves along the geodesic from the iterate towards one sample:
/// `M <- S M S` with `S = (1 - eta) I + eta T`.
pub fn frechet_mean_sgd<S: Scalar>(
    samples: &[CovMatrix<S>],
    init: &Init<S>,
    cfg: &SgdConfig,
) -> Result<CovMatrix<S>> {
    check_samples(samples)?;
    cfg.check()?;
    let n = samples[0].dim();
    let uniform = vec![RealOf::<S>::one(); samples.len()];
    let mut m = resolve_init(samples, &uniform, init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let eye = DMatrix::<S>::identity(n, n);
    for k in 0..cfg.steps {
        let pick = match cfg.sampling {
            Sampling::WithReplacement => rng.random_range(0..samples.len()),
            Sampling::Reshuffle => {
                let pos = k % samples.len();
                if pos == 0 {
                    order.shuffle(&mut rng);
                }
                order[pos]
            }
        };
        let eta = RealOf::<S>::c(cfg.step_size(k));
        let map = TransportBase::new(&m, default_rank_tol()).map_to(&samples[pick])?;
        let step = &eye * S::from_real(RealOf::<S>::one() - eta) + map * S::from_real(eta);
        m = CovMatrix::from_congruence(&step * m.matrix() * &step);
    }
    Ok(m)
}

/// Which pointwise solver a mean flow uses.
#[derive(Debug, Clone)]
pub enum MeanAlgorithm<S: Scalar> {
    Gd(GdConfig<S>),
    Sgd(SgdConfig),
}

impl<S: Scalar> Default for MeanAlgorithm<S> {
    fn default() -> Self {
        MeanAlgorithm::Gd(GdConfig::default())
    }
}

#[derive(Debug, Clone)]
pub struct FlowMeanConfig<S: Scalar> {
    pub algorithm: MeanAlgorithm<S>,
    /// Start grid point `j + 1` at the solution for `j`. Forces sequential
    /// execution across grid points.
    pub warm_start: bool,
}

impl<S: Scalar> Default for FlowMeanConfig<S> {
    fn default() -> Self {
        FlowMeanConfig {
            algorithm: MeanAlgorithm::default(),
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowMeanResult<S: Scalar> {
    pub mean: Flow<S>,
    /// One trace per grid point; empty records for stochastic descent.
    pub traces: Vec<ConvergenceTrace>,
}

impl<S: Scalar> FlowMeanResult<S> {
    pub fn all_converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }

    /// Grid indices where descent stopped at `max_iter`.
    pub fn unconverged(&self) -> Vec<usize> {
        self.traces
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.converged)
            .map(|(j, _)| j)
            .collect()
    }

    /// All traces in one table with a leading grid-index column.
    pub fn write_traces_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_index", "iteration", "functional", "residual"])?;
        for (j, t) in self.traces.iter().enumerate() {
            for r in &t.records {
                w.write_record(&[
                    j.to_string(),
                    r.iteration.to_string(),
                    format!("{:e}", r.functional),
                    format!("{:e}", r.residual),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn solve_point<S: Scalar>(
    samples: &[CovMatrix<S>],
    algorithm: &MeanAlgorithm<S>,
    warm: Option<CovMatrix<S>>,
    index: usize,
) -> Result<(CovMatrix<S>, ConvergenceTrace)> {
    let wrap = |e: BwError| BwError::PointwiseFailure {
        index,
        source: Box::new(e),
    };
    match algorithm {
        MeanAlgorithm::Gd(cfg) => {
            let res = match warm {
                Some(m) => frechet_mean_gd(
                    samples,
                    &GdConfig {
                        init: Init::Explicit(m),
                        ..cfg.clone()
                    },
                ),
                None => frechet_mean_gd(samples, cfg),
            }
            .map_err(wrap)?;
            Ok((res.mean, res.trace))
        }
        MeanAlgorithm::Sgd(cfg) => {
            let init = warm.map(Init::Explicit).unwrap_or_default();
            // independent, reproducible stream per grid point
            let cfg = SgdConfig {
                seed: cfg.seed.wrapping_add(index as u64),
                ..*cfg
            };
            let mean = frechet_mean_sgd(samples, &init, &cfg).map_err(wrap)?;
            Ok((
                mean,
                ConvergenceTrace {
                    records: Vec::new(),
                    converged: true,
                },
            ))
        }
    }
}

/// Fréchet mean flow: pointwise means stitched along the shared grid.
pub fn frechet_mean_flow<S: Scalar>(
    set: &FlowSet<S>,
    cfg: &FlowMeanConfig<S>,
) -> Result<FlowMeanResult<S>> {
    let m = set.grid().len();
    let solved: Vec<(CovMatrix<S>, ConvergenceTrace)> = if cfg.warm_start {
        let mut out: Vec<(CovMatrix<S>, ConvergenceTrace)> = Vec::with_capacity(m);
        for j in 0..m {
            let warm = out.last().map(|(prev, _)| prev.clone());
            out.push(solve_point(&set.slice_at(j), &cfg.algorithm, warm, j)?);
        }
        out
    } else {
        (0..m)
            .into_par_iter()
            .map(|j| solve_point(&set.slice_at(j), &cfg.algorithm, None, j))
            .collect::<Result<Vec<_>>>()?
    };
    let (mats, traces): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    Ok(FlowMeanResult {
        mean: Flow::new(set.grid().clone(), mats)?,
        traces,
    })
}

/// Fréchet mean flow with grid point `j` started from `init` at `j`; grid
/// points are solved in parallel.
pub fn frechet_mean_flow_from<S: Scalar>(
    set: &FlowSet<S>,
    init: &Flow<S>,
    algorithm: &MeanAlgorithm<S>,
) -> Result<FlowMeanResult<S>> {
    if !init.grid().same_as(set.grid()) {
        return Err(BwError::GridMismatch);
    }
    if init.dim() != set.dim() {
        return Err(BwError::DimMismatch {
            left: set.dim(),
            right: init.dim(),
        });
    }
    let solved = (0..set.grid().len())
        .into_par_iter()
        .map(|j| solve_point(&set.slice_at(j), algorithm, Some(init.at(j).clone()), j))
        .collect::<Result<Vec<_>>>()?;
    let (mats, traces): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    Ok(FlowMeanResult {
        mean: Flow::new(set.grid().clone(), mats)?,
        traces,
    })
}

/// Weighted Fréchet functional `sum_i w_i Pi(M, F_i)^2`.
pub fn frechet_functional<S: Scalar>(
    m: &CovMatrix<S>,
    samples: &[CovMatrix<S>],
    weights: &[RealOf<S>],
) -> Result<RealOf<S>> {
    let base = TransportBase::new(m, default_rank_tol());
    samples
        .iter()
        .zip(weights)
        .try_fold(RealOf::<S>::zero(), |acc, (s, &w)| {
            Ok(acc + w * base.distance_sq_to(s)?)
        })
}

/// `||P ((1/n) sum_i T_M^{F_i} - I) P||_op` with `P` the range projector of
/// `M`; zero exactly at a Fréchet mean.
pub fn fixed_point_residual<S: Scalar>(
    m: &CovMatrix<S>,
    samples: &[CovMatrix<S>],
) -> Result<RealOf<S>> {
    let n = m.dim();
    let base = TransportBase::new(m, default_rank_tol());
    let mut t = DMatrix::<S>::zeros(n, n);
    let inv = RealOf::<S>::one() / RealOf::<S>::c(samples.len() as f64);
    for s in samples {
        t += base.map_to(s)? * S::from_real(inv);
    }
    Ok(base.range_residual(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Grid;
    use crate::random::{random_pd, random_psd};
    use crate::testutil::*;
    use num_complex::Complex64;

    fn diag(v: &[f64]) -> CovMatrix<f64> {
        CovMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn closed_form_means() {
        let cfg = GdConfig::default();
        let r = frechet_mean_gd(&[diag(&[1.0]), diag(&[9.0])], &cfg).unwrap();
        assert_close(r.mean.matrix()[(0, 0)], 4.0, 1e-10);
        assert!(r.trace.converged);

        let r = frechet_mean_gd(&[diag(&[1.0, 4.0]), diag(&[9.0, 16.0])], &cfg).unwrap();
        assert_mat_close(r.mean.matrix(), diag(&[4.0, 9.0]).matrix(), 1e-10);

        let mut rng = seeded(3);
        let one: CovMatrix<f64> = random_pd(&mut rng, 4);
        let r = frechet_mean_gd(std::slice::from_ref(&one), &cfg).unwrap();
        assert_mat_close(r.mean.matrix(), one.matrix(), 1e-12);
    }

    #[test]
    fn fixed_point_and_monotone_functional() {
        let mut rng = seeded(8);
        let samples: Vec<CovMatrix<f64>> = (0..10).map(|_| random_pd(&mut rng, 3)).collect();
        let r = frechet_mean_gd(&samples, &GdConfig::default()).unwrap();
        assert!(r.trace.converged);
        assert!(fixed_point_residual(&r.mean, &samples).unwrap() <= 1e-6);
        for w in r.trace.records.windows(2) {
            assert!(w[1].functional <= w[0].functional + 1e-12 * w[0].functional.max(1.0));
        }
    }

    #[test]
    fn complex_samples_and_index_init() {
        let mut rng = seeded(9);
        let samples: Vec<CovMatrix<Complex64>> = (0..6).map(|_| random_pd(&mut rng, 3)).collect();
        let cfg = GdConfig {
            init: Init::Index(2),
            ..GdConfig::default()
        };
        let r = frechet_mean_gd(&samples, &cfg).unwrap();
        assert!(r.trace.converged);
        assert!(fixed_point_residual(&r.mean, &samples).unwrap() <= 1e-6);
    }

    #[test]
    fn all_degenerate_is_rejected() {
        let a = diag(&[1.0, 0.0]);
        assert!(matches!(
            frechet_mean_gd(&[a.clone(), a], &GdConfig::default()),
            Err(BwError::AllDegenerate)
        ));
    }

    #[test]
    fn mixed_rank_samples_with_one_definite() {
        let mut rng = seeded(10);
        let mut samples: Vec<CovMatrix<f64>> = (0..5).map(|_| random_psd(&mut rng, 4, 2)).collect();
        samples.push(random_pd(&mut rng, 4));
        let r = frechet_mean_gd(&samples, &GdConfig::default()).unwrap();
        assert!(r.trace.converged);
        assert!(fixed_point_residual(&r.mean, &samples).unwrap() <= 1e-6);
    }

    #[test]
    fn sgd_examples() {
        let cfg = SgdConfig {
            steps: 5000,
            seed: 11,
            ..SgdConfig::default()
        };
        let m =
            frechet_mean_sgd(&[diag(&[1.0]), diag(&[9.0])], &Init::EuclideanMean, &cfg).unwrap();
        assert!((m.matrix()[(0, 0)] / 4.0 - 1.0).abs() < 0.02);
        let again =
            frechet_mean_sgd(&[diag(&[1.0]), diag(&[9.0])], &Init::EuclideanMean, &cfg).unwrap();
        assert_eq!(m, again);

        let single = diag(&[2.0, 5.0]);
        let one_step = SgdConfig { steps: 1, ..cfg };
        let m = frechet_mean_sgd(
            std::slice::from_ref(&single),
            &Init::Explicit(diag(&[1.0, 1.0])),
            &one_step,
        )
        .unwrap();
        assert_mat_close(m.matrix(), single.matrix(), 1e-12);

        let bad = SgdConfig { a: 3.0, ..cfg };
        assert!(
            frechet_mean_sgd(std::slice::from_ref(&single), &Init::EuclideanMean, &bad).is_err()
        );
    }

    #[test]
    fn with_replacement_sampling_runs() {
        let cfg = SgdConfig {
            steps: 2000,
            seed: 1,
            sampling: Sampling::WithReplacement,
            ..SgdConfig::default()
        };
        let m =
            frechet_mean_sgd(&[diag(&[1.0]), diag(&[9.0])], &Init::EuclideanMean, &cfg).unwrap();
        assert!((m.matrix()[(0, 0)] / 4.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn weighted_mean_rejects_non_monotone_maps() {
        // weights (2, -1) on scalars 1 and 9: T = 2*sqrt(1/M) - sqrt(9/M) < 0 near M = 1
        let s = [diag(&[1.0]), diag(&[9.0])];
        let cfg = GdConfig {
            init: Init::Explicit(diag(&[1.0])),
            ..GdConfig::default()
        };
        assert!(matches!(
            weighted_frechet_mean_gd(&s, &[2.0, -1.0], &cfg),
            Err(BwError::NotPsd { .. })
        ));
        let r = weighted_frechet_mean_gd(&s, &[0.25, 0.75], &GdConfig::default()).unwrap();
        assert_close(
            r.mean.matrix()[(0, 0)],
            (0.25f64 + 0.75 * 3.0).powi(2),
            1e-10,
        );
    }

    #[test]
    fn mean_flow_examples() {
        let g = Grid::uniform(5).unwrap();
        let a = Flow::constant(g.clone(), diag(&[1.0]));
        let b = Flow::constant(g.clone(), diag(&[9.0]));
        let set = FlowSet::new(vec![a, b]).unwrap();
        for warm_start in [true, false] {
            let cfg = FlowMeanConfig {
                warm_start,
                ..FlowMeanConfig::default()
            };
            let r = frechet_mean_flow(&set, &cfg).unwrap();
            assert!(r.all_converged());
            for m in r.mean.matrices() {
                assert_close(m.matrix()[(0, 0)], 4.0, 1e-8);
            }
        }
        let mut buf = Vec::new();
        let r = frechet_mean_flow(&set, &FlowMeanConfig::default()).unwrap();
        r.write_traces_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_index,iteration,functional,residual"));
    }

    #[test]
    fn pointwise_failure_reports_index() {
        let g = Grid::uniform(3).unwrap();
        let mk = |last: f64| {
            Flow::new(
                g.clone(),
                vec![diag(&[1.0, 1.0]), diag(&[1.0, 1.0]), diag(&[1.0, last])],
            )
            .unwrap()
        };
        let set = FlowSet::new(vec![mk(0.0), mk(0.0)]).unwrap();
        // a warm start from the PD solution at index 1 rescues the last point
        assert!(frechet_mean_flow(&set, &FlowMeanConfig::default())
            .unwrap()
            .all_converged());
        let cold = FlowMeanConfig {
            warm_start: false,
            ..FlowMeanConfig::default()
        };
        match frechet_mean_flow(&set, &cold) {
            Err(BwError::PointwiseFailure { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
