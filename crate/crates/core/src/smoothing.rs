//! Kernel smoothing for flows observed at scattered times.
//!
//! Nadaraya-Watson averages covariance matrices directly; local Fréchet
//! regression takes a weighted Fréchet mean with local-linear weights; the
//! covariance surface smoother fits a local plane to cross products of lifted
//! observations.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3};
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{weighted_frechet_mean_gd, GdConfig, Init};
use crate::error::{BwError, Result};
use crate::flow::{mccann_eval, Flow, Grid};
use crate::geometry::TransportBase;
use crate::pca::TangentField;
use crate::psd::{default_rank_tol, project_psd_unchecked, CovMatrix};
use crate::scalar::{Real, RealOf, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Uniform,
    #[default]
    Epanechnikov,
    /// Standard normal density cut at +-4 and renormalized.
    GaussianTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(BwError::InvalidConfig(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Kernel { kind, bandwidth })
    }

    /// Half-width of the support before scaling.
    pub fn support(&self) -> f64 {
        match self.kind {
            KernelKind::Uniform | KernelKind::Epanechnikov => 1.0,
            KernelKind::GaussianTruncated => 4.0,
        }
    }

    /// Unscaled kernel `K(u)`, integrating to one.
    pub fn profile(&self, u: f64) -> f64 {
        if u.abs() > self.support() {
            return 0.0;
        }
        match self.kind {
            KernelKind::Uniform => 0.5,
            KernelKind::Epanechnikov => 0.75 * (1.0 - u * u),
            KernelKind::GaussianTruncated => {
                let mass = libm::erf(4.0 / std::f64::consts::SQRT_2);
                (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * mass)
            }
        }
    }

    /// `K_h(x) = K(x / h) / h`.
    pub fn weight(&self, x: f64) -> f64 {
        self.profile(x / self.bandwidth) / self.bandwidth
    }
}

/// Matrices observed at scattered times, tagged by the flow they came from.
#[derive(Debug, Clone)]
pub struct ScatterObs<S: Scalar> {
    pub times: Vec<RealOf<S>>,
    pub mats: Vec<CovMatrix<S>>,
    pub flow_ids: Vec<usize>,
}

impl<S: Scalar> ScatterObs<S> {
    pub fn new(
        times: Vec<RealOf<S>>,
        mats: Vec<CovMatrix<S>>,
        flow_ids: Vec<usize>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(BwError::Empty("observations"));
        }
        if times.len() != mats.len() || times.len() != flow_ids.len() {
            return Err(BwError::InvalidConfig(format!(
                "{} times, {} matrices and {} flow ids",
                times.len(),
                mats.len(),
                flow_ids.len()
            )));
        }
        if let Some(t) = times
            .iter()
            .find(|&&t| !(t >= RealOf::<S>::zero() && t <= RealOf::<S>::one()))
        {
            return Err(BwError::InvalidGrid(format!(
                "observation time {t} outside [0, 1]"
            )));
        }
        let dim = mats[0].dim();
        if let Some(m) = mats.iter().find(|m| m.dim() != dim) {
            return Err(BwError::DimMismatch {
                left: dim,
                right: m.dim(),
            });
        }
        Ok(ScatterObs {
            times,
            mats,
            flow_ids,
        })
    }

    /// Every grid point of every flow, tagged with the flow index.
    pub fn from_flows(flows: &[Flow<S>]) -> Result<Self> {
        let (mut times, mut mats, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for (i, f) in flows.iter().enumerate() {
            for (t, m) in f.times().iter().zip(f.matrices()) {
                times.push(*t);
                mats.push(m.clone());
                ids.push(i);
            }
        }
        Self::new(times, mats, ids)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].dim()
    }

    pub fn n_flows(&self) -> usize {
        self.flow_ids.iter().max().map_or(0, |&m| m + 1)
    }

    /// Observations whose flow id satisfies `keep`.
    pub fn filter_flows(&self, keep: impl Fn(usize) -> bool) -> Option<Self> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&j| keep(self.flow_ids[j]))
            .collect();
        if idx.is_empty() {
            return None;
        }
        Some(ScatterObs {
            times: idx.iter().map(|&j| self.times[j]).collect(),
            mats: idx.iter().map(|&j| self.mats[j].clone()).collect(),
            flow_ids: idx.iter().map(|&j| self.flow_ids[j]).collect(),
        })
    }

    fn kernel_weights(&self, kernel: &Kernel, t: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|&tj| kernel.weight(tj.to_f64_lossy() - t))
            .collect()
    }
}

/// Nadaraya-Watson estimate: kernel-weighted Euclidean average at each
/// evaluation time.
pub fn nw_smooth<S: Scalar>(
    obs: &ScatterObs<S>,
    kernel: &Kernel,
    eval: &Grid<RealOf<S>>,
) -> Result<Flow<S>> {
    let d = obs.dim();
    let mats: Vec<Option<CovMatrix<S>>> = eval
        .points()
        .par_iter()
        .map(|&t| {
            let w = obs.kernel_weights(kernel, t.to_f64_lossy());
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let mut acc = DMatrix::<S>::zeros(d, d);
            for (m, &wj) in obs.mats.iter().zip(&w) {
                if wj > 0.0 {
                    acc += m.matrix() * S::from_real(RealOf::<S>::c(wj / total));
                }
            }
            Some(project_psd_unchecked(&acc))
        })
        .collect();
    collect_windows(eval, mats)
}

fn collect_windows<S: Scalar>(
    eval: &Grid<RealOf<S>>,
    mats: Vec<Option<CovMatrix<S>>>,
) -> Result<Flow<S>> {
    let empty: Vec<f64> = eval
        .points()
        .iter()
        .zip(&mats)
        .filter(|(_, m)| m.is_none())
        .map(|(t, _)| t.to_f64_lossy())
        .collect();
    if !empty.is_empty() {
        return Err(BwError::EmptyWindow(empty));
    }
    Flow::new(eval.clone(), mats.into_iter().map(Option::unwrap).collect())
}

/// Local-linear weights at one evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct LfrWeights {
    /// `s(T_j, t, h)`; `(1/r) sum_j s_j = 1`.
    pub weights: Vec<f64>,
    /// The local moment matrix was singular and kernel weights were used.
    pub singular_moments: bool,
}

/// Local-linear weights
/// `s_j = K_h(T_j - t) [mu_2 - mu_1 (T_j - t)] / (mu_0 mu_2 - mu_1^2)`
/// with `mu_k = (1/r) sum_j K_h(T_j - t) (T_j - t)^k`.
pub fn lfr_weights(times: &[f64], t: f64, kernel: &Kernel) -> Result<LfrWeights> {
    let r = times.len() as f64;
    let k: Vec<f64> = times.iter().map(|&tj| kernel.weight(tj - t)).collect();
    let (mut mu0, mut mu1, mut mu2) = (0.0, 0.0, 0.0);
    for (&tj, &kj) in times.iter().zip(&k) {
        let x = tj - t;
        mu0 += kj;
        mu1 += kj * x;
        mu2 += kj * x * x;
    }
    if mu0 <= 0.0 {
        return Err(BwError::EmptyWindow(vec![t]));
    }
    mu0 /= r;
    mu1 /= r;
    mu2 /= r;
    let det = mu0 * mu2 - mu1 * mu1;
    if det <= 1e-14 * mu0 * mu2 {
        let weights = k.iter().map(|&kj| kj / mu0).collect();
        return Ok(LfrWeights {
            weights,
            singular_moments: true,
        });
    }
    let weights = times
        .iter()
        .zip(&k)
        .map(|(&tj, &kj)| kj * (mu2 - mu1 * (tj - t)) / det)
        .collect();
    Ok(LfrWeights {
        weights,
        singular_moments: false,
    })
}

/// What happened at one evaluation time of [`lfr_estimate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LfrFlags {
    pub time: f64,
    pub singular_moments: bool,
    /// Negative weights were clipped at zero.
    pub clipped: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LfrResult<S: Scalar> {
    pub flow: Flow<S>,
    pub flags: Vec<LfrFlags>,
}

impl<S: Scalar> LfrResult<S> {
    pub fn any_fallback(&self) -> bool {
        self.flags.iter().any(|f| f.clipped || f.singular_moments)
    }
}

/// Local Fréchet regression: at each evaluation time, the Fréchet mean under
/// local-linear weights.
///
/// Negative weights are kept unless their signed sum is under a tenth of
/// their absolute sum or the weighted map average leaves the PSD cone; the
/// weights are then clipped at zero and the time is flagged.
pub fn lfr_estimate<S: Scalar>(
    obs: &ScatterObs<S>,
    kernel: &Kernel,
    eval: &Grid<RealOf<S>>,
    cfg: &GdConfig<S>,
) -> Result<LfrResult<S>> {
    let times: Vec<f64> = obs.times.iter().map(|t| t.to_f64_lossy()).collect();
    let solved: Vec<Result<(CovMatrix<S>, LfrFlags)>> = eval
        .points()
        .par_iter()
        .map(|&t| lfr_point(obs, &times, kernel, t.to_f64_lossy(), cfg))
        .collect();
    let mut empty = Vec::new();
    let mut mats = Vec::with_capacity(solved.len());
    let mut flags = Vec::with_capacity(solved.len());
    for res in solved {
        match res {
            Ok((m, f)) => {
                mats.push(m);
                flags.push(f);
            }
            Err(BwError::EmptyWindow(ts)) => empty.extend(ts),
            Err(e) => return Err(e),
        }
    }
    if !empty.is_empty() {
        return Err(BwError::EmptyWindow(empty));
    }
    Ok(LfrResult {
        flow: Flow::new(eval.clone(), mats)?,
        flags,
    })
}

fn lfr_point<S: Scalar>(
    obs: &ScatterObs<S>,
    times: &[f64],
    kernel: &Kernel,
    t: f64,
    cfg: &GdConfig<S>,
) -> Result<(CovMatrix<S>, LfrFlags)> {
    let lw = lfr_weights(times, t, kernel)?;
    let mut flags = LfrFlags {
        time: t,
        singular_moments: lw.singular_moments,
        ..LfrFlags::default()
    };
    let active: Vec<usize> = (0..times.len()).filter(|&j| lw.weights[j] != 0.0).collect();
    let samples: Vec<CovMatrix<S>> = active.iter().map(|&j| obs.mats[j].clone()).collect();
    let raw: Vec<f64> = active.iter().map(|&j| lw.weights[j]).collect();

    let signed: f64 = raw.iter().sum();
    let absolute: f64 = raw.iter().map(|w| w.abs()).sum();
    if signed >= 0.1 * absolute {
        let w: Vec<RealOf<S>> = raw.iter().map(|&x| RealOf::<S>::c(x / signed)).collect();
        match weighted_frechet_mean_gd(&samples, &w, cfg) {
            Ok(res) if res.trace.converged => {
                flags.iterations = res.trace.iterations();
                return Ok((res.mean, flags));
            }
            Ok(_) | Err(BwError::NotPsd { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    flags.clipped = true;
    let clipped: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let w: Vec<RealOf<S>> = clipped.iter().map(|&x| RealOf::<S>::c(x / total)).collect();
    let res = weighted_frechet_mean_gd(
        &samples,
        &w,
        &GdConfig {
            init: Init::EuclideanMean,
            ..cfg.clone()
        },
    )?;
    if !res.trace.converged {
        return Err(BwError::NonConvergence {
            iterations: res.trace.iterations(),
            residual: res.trace.final_residual().unwrap_or(f64::NAN),
        });
    }
    flags.iterations = res.trace.iterations();
    Ok((res.mean, flags))
}

/// Which mean estimator a bandwidth sweep scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanEstimator {
    #[default]
    NadarayaWatson,
    LocalFrechet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bandwidth: f64,
    /// Mean leave-one-flow-out squared error; infinite when some held-out
    /// time had an empty window.
    pub error: f64,
}

/// Leave-one-flow-out error of the mean estimator for each bandwidth.
pub fn mean_bandwidth_sweep<S: Scalar>(
    obs: &ScatterObs<S>,
    kind: KernelKind,
    bandwidths: &[f64],
    estimator: MeanEstimator,
) -> Result<Vec<SweepRow>> {
    let n = obs.n_flows();
    if n < 2 {
        return Err(BwError::InvalidConfig(
            "leave-one-flow-out needs at least two flows".into(),
        ));
    }
    bandwidths
        .par_iter()
        .map(|&h| {
            let kernel = Kernel::new(kind, h)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                let (Some(train), Some(test)) =
                    (obs.filter_flows(|f| f != i), obs.filter_flows(|f| f == i))
                else {
                    continue;
                };
                let mut ts: Vec<RealOf<S>> = test.times.clone();
                ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                ts.dedup();
                let grid = Grid::new(ts)?;
                let fit = match estimator {
                    MeanEstimator::NadarayaWatson => nw_smooth(&train, &kernel, &grid),
                    MeanEstimator::LocalFrechet => {
                        lfr_estimate(&train, &kernel, &grid, &GdConfig::default()).map(|r| r.flow)
                    }
                };
                let fit = match fit {
                    Ok(f) => f,
                    Err(BwError::EmptyWindow(_)) => {
                        return Ok(SweepRow {
                            bandwidth: h,
                            error: f64::INFINITY,
                        })
                    }
                    Err(e) => return Err(e),
                };
                for (t, m) in test.times.iter().zip(&test.mats) {
                    let j = grid.position(*t).expect("held-out time on its own grid");
                    sum += crate::geometry::bw_distance_sq(fit.at(j), m)?.to_f64_lossy();
                    count += 1;
                }
            }
            Ok(SweepRow {
                bandwidth: h,
                error: sum / count.max(1) as f64,
            })
        })
        .collect()
}

/// Bandwidth with the smallest finite sweep error.
pub fn best_bandwidth(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.error.is_finite())
        .min_by(|a, b| a.error.partial_cmp(&b.error).unwrap())
        .map(|r| r.bandwidth)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Stacks a matrix into a real vector: entries column-major, and for complex
/// scalars real and imaginary parts interleaved. The Euclidean inner product
/// of two such vectors is `Re tr(A B^*)`.
pub fn realify<S: Scalar>(m: &DMatrix<S>) -> DVector<RealOf<S>> {
    let parts = if S::KIND == crate::scalar::ScalarKind::Complex {
        2
    } else {
        1
    };
    let mut v = DVector::zeros(m.len() * parts);
    for (k, x) in m.iter().enumerate() {
        let (re, im) = x.parts();
        v[k * parts] = re;
        if parts == 2 {
            v[k * parts + 1] = im;
        }
    }
    v
}

/// Inverse of [`realify`] for `d x d` matrices.
pub fn unrealify<S: Scalar>(v: &DVector<RealOf<S>>, d: usize) -> DMatrix<S> {
    let parts = v.len() / (d * d);
    DMatrix::from_fn(d, d, |i, j| {
        let k = (j * d + i) * parts;
        let im = if parts == 2 {
            v[k + 1]
        } else {
            RealOf::<S>::zero()
        };
        S::from_parts(v[k], im).expect("complex part on a real scalar")
    })
}

/// Lifted observations grouped by flow: `(time, realified chi)` pairs.
#[derive(Debug, Clone)]
pub struct ScatterTangents<R: Real> {
    pub dim: usize,
    pub flows: Vec<Vec<(R, DVector<R>)>>,
}

impl<R: Real> ScatterTangents<R> {
    pub fn vector_len(&self) -> usize {
        self.flows
            .iter()
            .flatten()
            .next()
            .map_or(0, |(_, v)| v.len())
    }

    /// Observation times per flow.
    pub fn times(&self) -> Vec<Vec<f64>> {
        self.flows
            .iter()
            .map(|f| f.iter().map(|(t, _)| t.to_f64_lossy()).collect())
            .collect()
    }
}

/// Lifts scattered observations along a mean flow evaluated at each
/// observation time (McCann interpolation between grid points).
pub fn scatter_log_fields<S: Scalar>(
    obs: &ScatterObs<S>,
    mean: &Flow<S>,
) -> Result<ScatterTangents<RealOf<S>>> {
    let n = obs.n_flows();
    let d = obs.dim();
    let lifted: Vec<(usize, RealOf<S>, DVector<RealOf<S>>)> = (0..obs.len())
        .into_par_iter()
        .map(|j| {
            let m = mccann_eval(mean, obs.times[j])?;
            let base = TransportBase::new(&m, default_rank_tol());
            let t = base
                .map_to(&obs.mats[j])
                .map_err(|_| BwError::KernelNotNestedAt {
                    flow: obs.flow_ids[j],
                    time: j,
                })?;
            let chi = (t - DMatrix::<S>::identity(d, d)) * base.sqrt();
            Ok((obs.flow_ids[j], obs.times[j], realify(&chi)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flows = vec![Vec::new(); n];
    for (i, t, v) in lifted {
        flows[i].push((t, v));
    }
    Ok(ScatterTangents { dim: d, flows })
}

/// Smoothed covariance surface of lifted tangents on a product grid. Each
/// value is a real `p x p` matrix acting on realified tangent vectors.
#[derive(Debug, Clone)]
pub struct CovSurface<R: Real> {
    pub grid_s: Grid<R>,
    pub grid_t: Grid<R>,
    pub dim: usize,
    /// Row-major over `(s, t)`.
    pub values: Vec<DMatrix<R>>,
}

impl<R: Real> CovSurface<R> {
    pub fn at(&self, a: usize, b: usize) -> &DMatrix<R> {
        &self.values[a * self.grid_t.len() + b]
    }
}

/// Local-linear smoother of the cross products `chi_ij chi_il^T` (`j != l`)
/// at every point of `grid_s x grid_t`.
pub fn cov_surface_smooth<R: Real>(
    data: &ScatterTangents<R>,
    kernel: &Kernel,
    grid_s: &Grid<R>,
    grid_t: &Grid<R>,
) -> Result<CovSurface<R>> {
    let times = data.times();
    let vecs: Vec<Vec<DVector<f64>>> = data
        .flows
        .iter()
        .map(|f| f.iter().map(|(_, v)| v.map(|x| x.to_f64_lossy())).collect())
        .collect();
    let value = |i: usize, j: usize, l: usize| &vecs[i][j] * vecs[i][l].transpose();
    smooth_pair_surface(
        &times,
        value,
        data.vector_len(),
        data.dim,
        kernel,
        grid_s,
        grid_t,
    )
}

/// Local-linear surface smoother for pair responses. `times[i]` lists the
/// observation times of flow `i`; `value(i, j, l)` is the `p x p` response
/// for the ordered pair `(j, l)`, `j != l`, of that flow.
pub fn smooth_pair_surface<R: Real, F>(
    times: &[Vec<f64>],
    value: F,
    p: usize,
    dim: usize,
    kernel: &Kernel,
    grid_s: &Grid<R>,
    grid_t: &Grid<R>,
) -> Result<CovSurface<R>>
where
    F: Fn(usize, usize, usize) -> DMatrix<f64> + Sync,
{
    let norm = 1.0 / times.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let points: Vec<(f64, f64)> = grid_s
        .points()
        .iter()
        .flat_map(|&s| {
            grid_t
                .points()
                .iter()
                .map(move |&t| (s.to_f64_lossy(), t.to_f64_lossy()))
        })
        .collect();
    let values = points
        .par_iter()
        .map(|&(s, t)| surface_point(times, &value, p, kernel, s, t, norm).map(|v| v.map(R::c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovSurface {
        grid_s: grid_s.clone(),
        grid_t: grid_t.clone(),
        dim,
        values,
    })
}

fn surface_point<F>(
    times: &[Vec<f64>],
    value: &F,
    p: usize,
    kernel: &Kernel,
    s: f64,
    t: f64,
    norm: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(usize, usize, usize) -> DMatrix<f64>,
{
    let h = kernel.bandwidth;
    // s_ab for (a, b) in {00, 10, 01, 20, 11, 02}
    let mut sm = [0.0f64; 6];
    let mut r00 = DMatrix::<f64>::zeros(p, p);
    let mut r10 = DMatrix::<f64>::zeros(p, p);
    let mut r01 = DMatrix::<f64>::zeros(p, p);
    for (i, flow) in times.iter().enumerate() {
        let ks: Vec<f64> = flow.iter().map(|&tj| kernel.weight(tj - s)).collect();
        let kt: Vec<f64> = flow.iter().map(|&tl| kernel.weight(tl - t)).collect();
        for (j, &tj) in flow.iter().enumerate() {
            if ks[j] == 0.0 {
                continue;
            }
            let x = (tj - s) / h;
            for (l, &tl) in flow.iter().enumerate() {
                if l == j || kt[l] == 0.0 {
                    continue;
                }
                let y = (tl - t) / h;
                let w = ks[j] * kt[l] * norm;
                sm[0] += w;
                sm[1] += w * x;
                sm[2] += w * y;
                sm[3] += w * x * x;
                sm[4] += w * x * y;
                sm[5] += w * y * y;
                let v = value(i, j, l);
                r00 += &v * w;
                r10 += &v * (w * x);
                r01 += &v * (w * y);
            }
        }
    }
    let [s00, s10, s01, s20, s11, s02] = sm;
    let design = Matrix3::new(s00, s10, s01, s10, s20, s11, s01, s11, s02);
    let det = design.determinant();
    if det.abs() < 1e-14 {
        return Err(BwError::SingularDesign { s, t });
    }
    let c0 = s20 * s02 - s11 * s11;
    let c1 = s10 * s02 - s01 * s11;
    let c2 = s10 * s11 - s01 * s20;
    Ok((r00 * c0 - r10 * c1 + r01 * c2) / det)
}

/// Eigenvalues and orthonormal eigenfields of a smoothed surface on a square
/// grid, with negative eigenvalues discarded.
#[derive(Debug, Clone)]
pub struct SurfaceEigen<R: Real> {
    pub eigenvalues: Vec<R>,
    /// `functions[k][a]` is the realified value at grid point `a`.
    pub functions: Vec<Vec<DVector<R>>>,
}

impl<R: Real> SurfaceEigen<R> {
    /// Eigenfield `k` as matrices.
    pub fn field<S: Scalar<RealField = R>>(
        &self,
        k: usize,
        grid: &Grid<R>,
        dim: usize,
    ) -> TangentField<S> {
        TangentField {
            grid: grid.clone(),
            mats: self.functions[k]
                .iter()
                .map(|v| unrealify(v, dim))
                .collect(),
        }
    }
}

/// Leading `k` eigenpairs of the quadrature-weighted surface operator,
/// symmetrized before decomposition.
pub fn surface_eigen<R: Real>(surface: &CovSurface<R>, k: usize) -> Result<SurfaceEigen<R>> {
    if !surface.grid_s.same_as(&surface.grid_t) {
        return Err(BwError::GridMismatch);
    }
    let m = surface.grid_s.len();
    let p = surface.values[0].nrows();
    let w: Vec<f64> = surface
        .grid_s
        .quadrature()
        .weights
        .iter()
        .map(|x| x.to_f64_lossy())
        .collect();
    let mut big = DMatrix::<f64>::zeros(m * p, m * p);
    for a in 0..m {
        for b in 0..m {
            let scale = (w[a] * w[b]).sqrt();
            let block = surface.at(a, b);
            for i in 0..p {
                for j in 0..p {
                    big[(a * p + i, b * p + j)] = scale * block[(i, j)].to_f64_lossy();
                }
            }
        }
    }
    let big = (&big + big.transpose()) * 0.5;
    let eig = big.symmetric_eigen();
    let mut order: Vec<usize> = (0..m * p).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
    let mut eigenvalues = Vec::new();
    let mut functions = Vec::new();
    for &c in order.iter().take(k) {
        if eig.eigenvalues[c] <= 0.0 {
            break;
        }
        eigenvalues.push(R::c(eig.eigenvalues[c]));
        let v = eig.eigenvectors.column(c);
        functions.push(
            (0..m)
                .map(|a| DVector::from_fn(p, |i, _| R::c(v[a * p + i] / w[a].sqrt())))
                .collect(),
        );
    }
    Ok(SurfaceEigen {
        eigenvalues,
        functions,
    })
}

/// Leave-one-flow-out error of the surface smoother for each bandwidth: the
/// held-out cross products are compared with the surface fitted without them.
pub fn surface_bandwidth_sweep<R: Real>(
    data: &ScatterTangents<R>,
    kind: KernelKind,
    bandwidths: &[f64],
) -> Result<Vec<SweepRow>> {
    let all_times = data.times();
    let vecs: Vec<Vec<DVector<f64>>> = data
        .flows
        .iter()
        .map(|f| f.iter().map(|(_, v)| v.map(|x| x.to_f64_lossy())).collect())
        .collect();
    let p = data.vector_len();
    bandwidths
        .par_iter()
        .map(|&h| {
            let kernel = Kernel::new(kind, h)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..data.flows.len() {
                if data.flows[i].len() < 2 {
                    continue;
                }
                let mut times = all_times.clone();
                times[i].clear();
                let norm = 1.0 / times.iter().map(Vec::len).sum::<usize>().max(1) as f64;
                let value = |f: usize, j: usize, l: usize| &vecs[f][j] * vecs[f][l].transpose();
                for j in 0..vecs[i].len() {
                    for l in 0..vecs[i].len() {
                        if j == l {
                            continue;
                        }
                        let (tj, tl) = (all_times[i][j], all_times[i][l]);
                        let fit = match surface_point(&times, &value, p, &kernel, tj, tl, norm) {
                            Ok(f) => f,
                            Err(BwError::SingularDesign { .. }) => {
                                return Ok(SweepRow {
                                    bandwidth: h,
                                    error: f64::INFINITY,
                                })
                            }
                            Err(e) => return Err(e),
                        };
                        sum += (fit - value(i, j, l)).norm_squared();
                        count += 1;
                    }
                }
            }
            Ok(SweepRow {
                bandwidth: h,
                error: sum / count.max(1) as f64,
            })
        })
        .collect()
}
