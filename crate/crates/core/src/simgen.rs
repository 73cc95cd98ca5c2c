//! Random covariance flows generated as smooth congruence perturbations
//! `F_i(t) = T_i(t) M(t) T_i(t)` of a template flow `M`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BwError, Result};
use crate::flow::{Flow, FlowSet, Grid};
use crate::geometry::{interpolate_with_map, transport_map};
use crate::psd::{default_rank_tol, project_psd, CovMatrix};

/// Number of Fourier terms in the smooth random curves.
const CURVE_HARMONICS: usize = 3;
/// Standard deviation of the Gaussian curve behind the bimodal shapes; large
/// values push `g_1` towards a smooth square wave.
const SHAPE_STEEPNESS: f64 = 16.0;
/// Seed offset for the fixed curves `g_1`, `g_2` of the bimodal dataset.
const SHAPE_SEED_SALT: u64 = 0x6b1d_5e7a_93c2_0f41;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    /// McCann interpolation from the Brownian-motion covariance (t = 0) to
    /// the Brownian-bridge covariance (t = 1).
    BmBbGeodesic,
    /// Interpolation between two Matérn covariances with smoothness `nu1`
    /// and `nu2`.
    MaternPair {
        nu1: f64,
        nu2: f64,
        #[serde(default = "one")]
        length_scale: f64,
        #[serde(default = "one")]
        variance: f64,
    },
    /// A fixed flow; its grid overrides `m`.
    #[serde(skip)]
    Explicit(Flow<f64>),
}

fn one() -> f64 {
    1.0
}

fn default_truncation() -> usize {
    50
}

fn default_template() -> Template {
    Template::BmBbGeodesic
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dim: usize,
    pub grid_size: usize,
    pub n_flows: usize,
    pub nu: f64,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_template")]
    pub template: Template,
}

impl SimConfig {
    pub fn new(dim: usize, grid_size: usize, n_flows: usize, nu: f64, seed: u64) -> Self {
        SimConfig {
            dim,
            grid_size,
            n_flows,
            nu,
            truncation: default_truncation(),
            seed,
            template: Template::BmBbGeodesic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BwError::InvalidConfig(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if self.truncation == 0 {
            return bad("truncation must be at least 1".into());
        }
        match &self.template {
            Template::Explicit(f) => {
                if f.dim() != self.dim {
                    return bad(format!(
                        "explicit template has dim {}, config says {}",
                        f.dim(),
                        self.dim
                    ));
                }
            }
            _ => {
                if self.grid_size == 0 {
                    return bad("grid_size must be positive".into());
                }
            }
        }
        if let Template::MaternPair {
            nu1,
            nu2,
            length_scale,
            variance,
        } = self.template
        {
            if !(nu1 > 0.0 && nu2 > 0.0 && length_scale > 0.0 && variance > 0.0) {
                return bad("Matérn parameters must be positive".into());
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        match &self.template {
            Template::Explicit(f) => Ok(f.grid().clone()),
            _ => Grid::uniform(self.grid_size),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| BwError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Law of the positive mean-one curves `W_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightLaw {
    Constant,
    /// `exp(Z(t) - sigma^2/2)` with `Z` a stationary Gaussian Fourier curve of
    /// standard deviation `sigma`.
    LogNormal {
        sigma: f64,
    },
}

/// Law of the phase curve `theta(t)` in `[0, 2 pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseLaw {
    Zero,
    /// `2 pi * logistic(Z(t))` with `Z` as above.
    Logistic {
        sigma: f64,
    },
}

/// Law of the global scale `c / nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleLaw {
    ChiSquared,
    /// `c = nu`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLaw {
    pub weights: WeightLaw,
    pub phase: PhaseLaw,
    pub scale: ScaleLaw,
}

impl Default for PerturbationLaw {
    fn default() -> Self {
        PerturbationLaw {
            weights: WeightLaw::LogNormal { sigma: 0.3 },
            phase: PhaseLaw::Logistic { sigma: 1.0 },
            scale: ScaleLaw::ChiSquared,
        }
    }
}

impl PerturbationLaw {
    /// `W = 1`, `theta = 0`, `c = nu`: every perturbation is the projector
    /// onto the harmonic span.
    pub fn degenerate() -> Self {
        PerturbationLaw {
            weights: WeightLaw::Constant,
            phase: PhaseLaw::Zero,
            scale: ScaleLaw::Fixed,
        }
    }
}

/// Coefficients of `sum_j a_j cos(2 pi j t) + b_j sin(2 pi j t)`, scaled so
/// the curve has pointwise standard deviation `sigma`.
#[derive(Debug, Clone)]
struct FourierCurve {
    cos: [f64; CURVE_HARMONICS],
    sin: [f64; CURVE_HARMONICS],
}

impl FourierCurve {
    fn sample<G: Rng + ?Sized>(rng: &mut G, sigma: f64) -> Self {
        let s = sigma / (CURVE_HARMONICS as f64).sqrt();
        let mut cos = [0.0; CURVE_HARMONICS];
        let mut sin = [0.0; CURVE_HARMONICS];
        for j in 0..CURVE_HARMONICS {
            let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            cos[j] = s * a;
            sin[j] = s * b;
        }
        FourierCurve { cos, sin }
    }

    fn eval(&self, t: f64) -> f64 {
        (0..CURVE_HARMONICS)
            .map(|j| {
                let a = 2.0 * PI * (j + 1) as f64 * t;
                self.cos[j] * a.cos() + self.sin[j] * a.sin()
            })
            .sum()
    }
}

/// Smallest value whose cumulative weight reaches half the total.
fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let half = 0.5 * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= half {
            return values[i];
        }
    }
    values[idx[idx.len() - 1]]
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy)]
enum Harmonic {
    Constant,
    Sin(usize),
    Cos(usize),
    /// Frequency `d/2` on an even grid: the alternating vector, which every
    /// shift maps to a multiple of itself.
    Nyquist,
}

/// The first `count` (at most `d`) real Fourier harmonics on `d` points: the
/// constant, then sine and cosine of increasing frequency.
fn harmonic_list(d: usize, count: usize) -> Vec<Harmonic> {
    let target = count.min(d);
    let mut out = Vec::with_capacity(target);
    out.push(Harmonic::Constant);
    let mut f = 1;
    while out.len() < target {
        if 2 * f == d {
            out.push(Harmonic::Nyquist);
            break;
        }
        out.push(Harmonic::Sin(f));
        if out.len() < target {
            out.push(Harmonic::Cos(f));
        }
        f += 1;
    }
    out
}

/// Cell midpoints `x_j = (j + 1/2) / d` of the spatial discretization of
/// `(0, 1]`.
pub fn spatial_points(d: usize) -> Vec<f64> {
    (0..d).map(|j| (j as f64 + 0.5) / d as f64).collect()
}

/// Orthonormal columns `psi_k(x - theta)` on the spatial grid, for the first
/// `count` harmonics (at most `d`). Shifts rotate each sine/cosine pair by
/// angle addition.
pub fn harmonic_basis(d: usize, count: usize, theta: f64) -> DMatrix<f64> {
    let list = harmonic_list(d, count);
    let xs = spatial_points(d);
    let mut b = DMatrix::zeros(d, list.len());
    let flat = 1.0 / (d as f64).sqrt();
    for (k, h) in list.iter().enumerate() {
        match *h {
            Harmonic::Constant => b.column_mut(k).fill(flat),
            Harmonic::Nyquist => {
                for j in 0..d {
                    b[(j, k)] = if j % 2 == 0 { flat } else { -flat };
                }
            }
            Harmonic::Sin(f) | Harmonic::Cos(f) => {
                let scale = (2.0 / d as f64).sqrt();
                let (sp, cp) = (2.0 * PI * f as f64 * theta).sin_cos();
                for (j, x) in xs.iter().enumerate() {
                    let (s, c) = (2.0 * PI * f as f64 * x).sin_cos();
                    b[(j, k)] = scale
                        * match h {
                            Harmonic::Sin(_) => s * cp - c * sp,
                            _ => c * cp + s * sp,
                        };
                }
            }
        }
    }
    b
}

fn kernel_matrix(d: usize, k: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let xs = spatial_points(d);
    DMatrix::from_fn(d, d, |i, j| k(xs[i], xs[j]) / d as f64)
}

/// Brownian-motion covariance `min(x, y)`, discretized with weight `1/d`.
pub fn brownian_motion_cov(d: usize) -> CovMatrix<f64> {
    CovMatrix::new_unchecked(kernel_matrix(d, f64::min))
}

/// Brownian-bridge covariance `min(x, y) - xy`, discretized with weight `1/d`.
pub fn brownian_bridge_cov(d: usize) -> CovMatrix<f64> {
    CovMatrix::new_unchecked(kernel_matrix(d, |x, y| x.min(y) - x * y))
}

/// Modified Bessel function of the second kind for `x > 0`, from
/// `K_nu(x) = int_0^inf exp(-x cosh u) cosh(nu u) du`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k needs x > 0");
    // the integrand is below e^-40 of its peak once x cosh u - nu u > x + 40
    let mut upper = 1.0f64;
    while x * upper.cosh() - nu * upper < x + 40.0 {
        upper += 0.5;
    }
    let steps = (upper / 0.005).ceil() as usize;
    let h = upper / steps as f64;
    let f = |u: f64| (-x * u.cosh() + x).exp() * (nu * u).cosh();
    let inner: f64 = (1..steps).map(|i| f(i as f64 * h)).sum();
    (-x).exp() * h * (0.5 * f(0.0) + inner + 0.5 * f(upper))
}

/// Matérn covariance at distance `r`.
pub fn matern(r: f64, nu: f64, length_scale: f64, variance: f64) -> f64 {
    if r == 0.0 {
        return variance;
    }
    let z = (2.0 * nu).sqrt() * r / length_scale;
    variance * 2f64.powf(1.0 - nu) / libm::tgamma(nu) * z.powf(nu) * bessel_k(nu, z)
}

/// Matérn covariance matrix on the spatial grid, projected onto the PSD cone
/// to remove round-off negatives.
pub fn matern_cov(d: usize, nu: f64, length_scale: f64, variance: f64) -> Result<CovMatrix<f64>> {
    project_psd(&kernel_matrix(d, |x, y| {
        matern((x - y).abs(), nu, length_scale, variance)
    }))
}

/// Geodesic flow between two covariances on the given grid.
pub fn geodesic_flow(
    f0: &CovMatrix<f64>,
    f1: &CovMatrix<f64>,
    grid: &Grid<f64>,
) -> Result<Flow<f64>> {
    let t = transport_map(f0, f1, default_rank_tol())?;
    let mats = grid
        .points()
        .iter()
        .map(|&s| {
            if s == 0.0 {
                f0.clone()
            } else if s == 1.0 {
                f1.clone()
            } else {
                interpolate_with_map(f0, &t, s)
            }
        })
        .collect();
    Flow::new(grid.clone(), mats)
}

pub fn template_flow(cfg: &SimConfig) -> Result<Flow<f64>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    match &cfg.template {
        Template::BmBbGeodesic => geodesic_flow(
            &brownian_motion_cov(cfg.dim),
            &brownian_bridge_cov(cfg.dim),
            &grid,
        ),
        Template::MaternPair {
            nu1,
            nu2,
            length_scale,
            variance,
        } => {
            let f0 = matern_cov(cfg.dim, *nu1, *length_scale, *variance)?;
            if nu1 == nu2 {
                return Ok(Flow::constant(grid, f0));
            }
            let f1 = matern_cov(cfg.dim, *nu2, *length_scale, *variance)?;
            geodesic_flow(&f0, &f1, &grid)
        }
        Template::Explicit(f) => Ok(f.clone()),
    }
}

/// Independent stream for flow `i`.
fn flow_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Random draws behind one perturbation curve.
struct PerturbationDraw {
    scale: f64,
    weights: Vec<Option<FourierCurve>>,
    weight_sigma: f64,
    phase: Option<FourierCurve>,
}

impl PerturbationDraw {
    fn sample<G: Rng + ?Sized>(
        rng: &mut G,
        cfg: &SimConfig,
        law: &PerturbationLaw,
    ) -> Result<Self> {
        let scale = match law.scale {
            ScaleLaw::ChiSquared => {
                let chi =
                    ChiSquared::new(cfg.nu).map_err(|e| BwError::InvalidConfig(e.to_string()))?;
                chi.sample(rng) / cfg.nu
            }
            ScaleLaw::Fixed => 1.0,
        };
        let (weights, weight_sigma) = match law.weights {
            WeightLaw::Constant => (vec![None; cfg.truncation], 0.0),
            WeightLaw::LogNormal { sigma } => {
                let w = (0..cfg.truncation)
                    .map(|_| Some(FourierCurve::sample(rng, sigma)))
                    .collect();
                (w, sigma)
            }
        };
        let phase = match law.phase {
            PhaseLaw::Zero => None,
            PhaseLaw::Logistic { sigma } => Some(FourierCurve::sample(rng, sigma)),
        };
        Ok(PerturbationDraw {
            scale,
            weights,
            weight_sigma,
            phase,
        })
    }

    fn matrix_at(&self, d: usize, t: f64) -> DMatrix<f64> {
        let theta = self
            .phase
            .as_ref()
            .map_or(0.0, |z| 2.0 * PI * logistic(z.eval(t)));
        let basis = harmonic_basis(d, self.weights.len(), theta);
        let half_var = 0.5 * self.weight_sigma * self.weight_sigma;
        let mut scaled = basis.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            let w = self.weights[k]
                .as_ref()
                .map_or(1.0, |z| (z.eval(t) - half_var).exp());
            col *= self.scale * w;
        }
        scaled * basis.transpose()
    }
}

/// Perturbation curve `T(t)` of flow `index` on the configured grid: the
/// symmetric PSD matrix with eigenvectors the shifted harmonics and
/// eigenvalues `c W_k(t) / nu`.
pub fn sample_perturbation(
    cfg: &SimConfig,
    law: &PerturbationLaw,
    index: usize,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let draw = PerturbationDraw::sample(&mut flow_rng(cfg.seed, index), cfg, law)?;
    Ok(grid
        .points()
        .iter()
        .map(|&t| draw.matrix_at(cfg.dim, t))
        .collect())
}

fn congruence(t: &DMatrix<f64>, m: &CovMatrix<f64>) -> CovMatrix<f64> {
    CovMatrix::from_congruence(t * m.matrix() * t)
}

/// `n` flows `T_i(t) M(t) T_i(t)`, one independent random stream per flow.
pub fn sample_flows(cfg: &SimConfig, law: &PerturbationLaw) -> Result<FlowSet<f64>> {
    let template = template_flow(cfg)?;
    let flows = (0..cfg.n_flows)
        .into_par_iter()
        .map(|i| {
            let ts = sample_perturbation(cfg, law, i)?;
            let mats = ts
                .iter()
                .zip(template.matrices())
                .map(|(t, m)| congruence(t, m))
                .collect();
            Flow::new(template.grid().clone(), mats)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowSet::new(flows)
}

#[derive(Debug, Clone)]
pub struct BimodalDataset {
    pub flows: FlowSet<f64>,
    /// Mixture branch of each flow: 0 for `a_1 > 0 > a_2`, 1 otherwise.
    pub labels: Vec<usize>,
    /// `W_i` on the grid.
    pub weight_curves: Vec<Vec<f64>>,
    /// The two fixed shape curves `g_1`, `g_2` on the grid.
    pub shapes: [Vec<f64>; 2],
}

/// Flows perturbed by `T_i(t) = W_i(t) sum_k w_k (c_k / nu) psi_k(. - theta_i)
/// psi_k(. - theta_i)^T` with `w_0 = 1`, `w_k = 1/k`, `c_k ~ chi2(nu)`, a
/// constant uniform phase and `W_i = 1 + a_1 g_1 + a_2 g_2`, where
/// `(a_1, a_2)` is drawn from one of two opposite unit squares.
///
/// The shapes are the mirrored pair `g_1 = logistic(Z - z0)`, `g_2 = 1 - g_1`
/// for a seeded smooth Gaussian curve `Z`. The offset `z0` is the median of
/// `Z` weighted by `tr M(t) dt`, which makes `g_1 - g_2` orthogonal to
/// time-constant perturbations in the tangent metric at the template.
pub fn bimodal_dataset(cfg: &SimConfig) -> Result<BimodalDataset> {
    let template = template_flow(cfg)?;
    let grid = template.grid().clone();
    let mut shape_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHAPE_SEED_SALT);
    let z = FourierCurve::sample(&mut shape_rng, SHAPE_STEEPNESS);
    let mut zs: Vec<f64> = grid.points().iter().map(|&t| z.eval(t)).collect();
    let mass: Vec<f64> = grid
        .quadrature()
        .weights
        .iter()
        .zip(template.matrices())
        .map(|(q, m)| q * m.trace())
        .collect();
    let med = weighted_median(&zs, &mass);
    zs.iter_mut().for_each(|v| *v -= med);
    let g1: Vec<f64> = zs.iter().map(|&v| logistic(v)).collect();
    let g2: Vec<f64> = g1.iter().map(|g| 1.0 - g).collect();
    let shapes = [g1, g2];
    let chi = ChiSquared::new(cfg.nu).map_err(|e| BwError::InvalidConfig(e.to_string()))?;
    let d = cfg.dim;

    let out = (0..cfg.n_flows)
        .into_par_iter()
        .map(|i| {
            let mut rng = flow_rng(cfg.seed, i);
            let label = usize::from(rng.random_bool(0.5));
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let (a1, a2) = if label == 0 { (u1, -u2) } else { (-u1, u2) };
            let theta = 2.0 * PI * rng.random::<f64>();
            let c: Vec<f64> = (0..cfg.truncation)
                .map(|_| chi.sample(&mut rng) / cfg.nu)
                .collect();

            let basis = harmonic_basis(d, cfg.truncation, theta);
            let mut scaled = basis.clone();
            for (k, mut col) in scaled.column_iter_mut().enumerate() {
                col *= c[k] / k.max(1) as f64;
            }
            let base = scaled * basis.transpose();
            let w: Vec<f64> = (0..grid.len())
                .map(|j| 1.0 + a1 * shapes[0][j] + a2 * shapes[1][j])
                .collect();
            let mats = template
                .matrices()
                .iter()
                .zip(&w)
                .map(|(m, &wj)| congruence(&(&base * wj), m))
                .collect();
            Ok((Flow::new(grid.clone(), mats)?, label, w))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut flows = Vec::with_capacity(out.len());
    let mut labels = Vec::with_capacity(out.len());
    let mut weight_curves = Vec::with_capacity(out.len());
    for (f, l, w) in out {
        flows.push(f);
        labels.push(l);
        weight_curves.push(w);
    }
    Ok(BimodalDataset {
        flows: FlowSet::new(flows)?,
        labels,
        weight_curves,
        shapes,
    })
}
