//! Spectral density flows of functional time series.
//!
//! A panel of `T` discretized curves yields lag autocovariances `R_h`; the
//! lag-windowed Fourier sum
//! `F_w = (1/2pi) sum_{|h| <= L} w(h) e^{-iwh} R_h` with `R_{-h} = R_h^T`
//! is a flow of Hermitian matrices over frequency. Real series have
//! `F_{-w} = conj(F_w)`, so only `w in [0, pi]` is stored, at grid time
//! `t = w / pi`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BwError, Result};
use crate::flow::{Flow, FlowSet, Grid};
use crate::psd::{hermitian_part, project_psd_unchecked};

/// One functional time series: row `t` is the curve observed at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub series_id: usize,
    pub values: DMatrix<f64>,
    pub centered: bool,
}

impl SeriesPanel {
    pub fn new(series_id: usize, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(BwError::InvalidConfig(format!(
                "series {series_id} has {} time points, need at least 2",
                values.nrows()
            )));
        }
        if !values.iter().all(|x| x.is_finite()) {
            return Err(BwError::NonFinite);
        }
        Ok(SeriesPanel {
            series_id,
            values,
            centered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Subtracts the time-average curve.
    pub fn centered(&self) -> Self {
        if self.centered {
            return self.clone();
        }
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        SeriesPanel {
            series_id: self.series_id,
            values,
            centered: true,
        }
    }

    pub fn apply(&self, op: &Preprocess) -> Result<Self> {
        match *op {
            Preprocess::Center => Ok(self.centered()),
            Preprocess::Difference => {
                let t = self.len();
                if t < 3 {
                    return Err(BwError::WindowTooLarge { window: 2, len: t });
                }
                let values = self.values.rows(1, t - 1) - self.values.rows(0, t - 1);
                Ok(SeriesPanel {
                    series_id: self.series_id,
                    values,
                    centered: false,
                })
            }
            Preprocess::MovingAverage(w) => {
                let t = self.len();
                if w == 0 || w + 1 > t {
                    return Err(BwError::WindowTooLarge { window: w, len: t });
                }
                let out = t - w + 1;
                let values = DMatrix::from_fn(out, self.dim(), |i, j| {
                    self.values.view((i, j), (w, 1)).sum() / w as f64
                });
                Ok(SeriesPanel {
                    series_id: self.series_id,
                    values,
                    centered: false,
                })
            }
            Preprocess::Log => {
                if let Some(x) = self.values.iter().find(|&&x| !(x > 0.0)) {
                    return Err(BwError::InvalidConfig(format!(
                        "log of non-positive value {x}"
                    )));
                }
                Ok(SeriesPanel {
                    series_id: self.series_id,
                    values: self.values.map(f64::ln),
                    centered: false,
                })
            }
        }
    }

    pub fn apply_all(&self, ops: &[Preprocess]) -> Result<Self> {
        ops.iter().try_fold(self.clone(), |p, op| p.apply(op))
    }
}

/// Panel preprocessing steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// First differences in time.
    Difference,
    Center,
    /// Trailing average over `w` consecutive times.
    MovingAverage(usize),
    /// Entrywise natural logarithm.
    Log,
}

/// Lag-`h` autocovariance `(1/(T-h)) sum_t X_{t+h} X_t^T` of the centered panel.
pub fn autocov(panel: &SeriesPanel, h: usize) -> Result<DMatrix<f64>> {
    let t = panel.len();
    if h >= t {
        return Err(BwError::LagTooLarge { lag: h, len: t });
    }
    let c = panel.centered();
    Ok(lag_product(&c.values, h))
}

fn lag_product(x: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let t = x.nrows();
    let lead = x.rows(h, t - h);
    let lag = x.rows(0, t - h);
    lead.transpose() * lag / (t - h) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagWindow {
    /// `w(h) = 1 - |h| / (L + 1)`; keeps the estimate positive semidefinite.
    #[default]
    Bartlett,
    /// `w(h) = 1`, the plain truncated sum.
    Rectangular,
}

impl LagWindow {
    pub fn weight(&self, h: usize, max_lag: usize) -> f64 {
        match self {
            LagWindow::Bartlett => 1.0 - h as f64 / (max_lag as f64 + 1.0),
            LagWindow::Rectangular => 1.0,
        }
    }
}

/// Estimated spectral density on a frequency grid over `[0, pi]`.
#[derive(Debug, Clone)]
pub struct SpectralFlow {
    /// Hermitian PSD matrices at grid time `t = w / pi`.
    pub flow: Flow<Complex64>,
    /// The Hermitian estimates before PSD projection.
    pub raw: Vec<DMatrix<Complex64>>,
    pub max_lag: usize,
    pub window: LagWindow,
}

impl SpectralFlow {
    /// Angular frequencies of the grid.
    pub fn frequencies(&self) -> Vec<f64> {
        self.flow.times().iter().map(|t| t * PI).collect()
    }
}

/// Lag-window spectral density estimate of one panel. `freqs` are grid
/// times in `[0, 1]`, standing for angular frequencies `pi * t`.
pub fn spectral_density_flow(
    panel: &SeriesPanel,
    max_lag: usize,
    freqs: &[f64],
    window: LagWindow,
) -> Result<SpectralFlow> {
    if freqs.is_empty() {
        return Err(BwError::EmptyFreqGrid);
    }
    if max_lag >= panel.len() {
        return Err(BwError::LagTooLarge {
            lag: max_lag,
            len: panel.len(),
        });
    }
    let grid = Grid::new(freqs.to_vec())?;
    let c = panel.centered();
    let lags: Vec<DMatrix<f64>> = (0..=max_lag).map(|h| lag_product(&c.values, h)).collect();
    let weights: Vec<f64> = (0..=max_lag).map(|h| window.weight(h, max_lag)).collect();
    let raw: Vec<DMatrix<Complex64>> = grid
        .points()
        .par_iter()
        .map(|&t| hermitian_part(&density_at(&lags, &weights, PI * t)))
        .collect();
    let mats = raw.iter().map(project_psd_unchecked).collect();
    Ok(SpectralFlow {
        flow: Flow::new(grid, mats)?,
        raw,
        max_lag,
        window,
    })
}

fn density_at(lags: &[DMatrix<f64>], weights: &[f64], omega: f64) -> DMatrix<Complex64> {
    let d = lags[0].nrows();
    let mut out = lags[0].map(|x| Complex64::new(weights[0] * x, 0.0));
    for (h, (r, &w)) in lags.iter().zip(weights).enumerate().skip(1) {
        let phase = Complex64::from_polar(w, -omega * h as f64);
        // e^{-iwh} R_h + e^{iwh} R_h^T
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += phase * r[(i, j)] + phase.conj() * r[(j, i)];
            }
        }
    }
    out / Complex64::new(2.0 * PI, 0.0)
}

/// Spectral density flows of several panels on one frequency grid.
pub fn spectral_flowset(
    panels: &[SeriesPanel],
    max_lag: usize,
    freqs: &[f64],
    window: LagWindow,
) -> Result<FlowSet<Complex64>> {
    let flows = panels
        .par_iter()
        .map(|p| spectral_density_flow(p, max_lag, freqs, window).map(|s| s.flow))
        .collect::<Result<Vec<_>>>()?;
    FlowSet::new(flows)
}

/// Recovers the lag-`h` autocovariance from a spectral flow,
/// `R_h = 2 Re int_0^pi e^{iwh} F_w dw`, by the trapezoid rule on the stored
/// grid. Uses the pre-projection estimates; exact on a uniform grid with
/// more than `(L + |h|) / 2` intervals.
pub fn invert_sdf(sdf: &SpectralFlow, h: i64) -> Result<DMatrix<Complex64>> {
    invert_matrices(&sdf.raw, sdf.flow.grid(), sdf.max_lag, h)
}

/// As [`invert_sdf`] but from the projected matrices.
pub fn invert_projected(sdf: &SpectralFlow, h: i64) -> Result<DMatrix<Complex64>> {
    let mats: Vec<DMatrix<Complex64>> = sdf
        .flow
        .matrices()
        .iter()
        .map(|m| m.matrix().clone())
        .collect();
    invert_matrices(&mats, sdf.flow.grid(), sdf.max_lag, h)
}

fn invert_matrices(
    mats: &[DMatrix<Complex64>],
    grid: &Grid<f64>,
    max_lag: usize,
    h: i64,
) -> Result<DMatrix<Complex64>> {
    let needed = 2 * max_lag + 1;
    if grid.len() < needed {
        return Err(BwError::GridTooCoarse {
            points: grid.len(),
            max_lag,
            needed,
        });
    }
    let pts = grid.points();
    if pts[0] != 0.0 || pts[pts.len() - 1] != 1.0 {
        return Err(BwError::InvalidGrid(
            "inversion needs a frequency grid spanning [0, 1]".into(),
        ));
    }
    // plain trapezoid on [0, pi]; normalized weights times the span pi
    let w = grid.quadrature().weights;
    let d = mats[0].nrows();
    let mut acc = DMatrix::<Complex64>::zeros(d, d);
    for ((m, &t), &wt) in mats.iter().zip(pts).zip(&w) {
        acc += m * Complex64::from_polar(wt * PI, PI * t * h as f64);
    }
    Ok(acc.map(|z| Complex64::new(2.0 * z.re, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white_noise(seed: u64, t: usize, d: usize) -> SeriesPanel {
        let mut rng = seeded(seed);
        SeriesPanel::new(0, DMatrix::from_fn(t, d, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn ar1(seed: u64, t: usize, d: usize, phi: f64) -> SeriesPanel {
        let mut rng = seeded(seed);
        let mut x = DMatrix::<f64>::zeros(t, d);
        for i in 0..t {
            for j in 0..d {
                let prev = if i > 0 { x[(i - 1, j)] } else { 0.0 };
                let nb = if i > 0 && j > 0 {
                    x[(i - 1, j - 1)]
                } else {
                    0.0
                };
                let e: f64 = rng.sample(StandardNormal);
                x[(i, j)] = phi * prev + 0.3 * nb + e;
            }
        }
        SeriesPanel::new(1, x).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        Grid::<f64>::uniform(n).unwrap().points().to_vec()
    }

    #[test]
    fn autocov_basics() {
        let p = SeriesPanel::new(0, DMatrix::from_element(10, 2, 3.0)).unwrap();
        assert_eq!(autocov(&p, 0).unwrap(), DMatrix::zeros(2, 2));
        assert!(matches!(autocov(&p, 10), Err(BwError::LagTooLarge { .. })));
        let w = white_noise(1, 10_000, 3);
        let r0 = autocov(&w, 0).unwrap();
        assert!(crate::psd::hermitian_eig(&r0)
            .unwrap()
            .values
            .iter()
            .all(|&l| l >= 0.0));
        assert!(autocov(&w, 1).unwrap().norm() <= 0.1 * r0.norm());
    }

    #[test]
    fn white_noise_is_flat() {
        let w = white_noise(2, 10_000, 3);
        let sdf = spectral_density_flow(&w, 20, &uniform(41), LagWindow::Bartlett).unwrap();
        let traces: Vec<f64> = sdf.flow.matrices().iter().map(|m| m.trace()).collect();
        let mean = traces.iter().sum::<f64>() / traces.len() as f64;
        let dev = traces.iter().map(|t| (t - mean).abs()).fold(0.0, f64::max);
        assert!(dev <= 0.15 * mean, "{dev} vs {mean}");
    }

    #[test]
    fn lag_zero_only_gives_flat_spectrum() {
        let p = ar1(3, 500, 2, 0.5);
        let r0 = autocov(&p, 0).unwrap();
        let sdf = spectral_density_flow(&p, 0, &uniform(9), LagWindow::Bartlett).unwrap();
        for m in &sdf.raw {
            assert_mat_close(&m.map(|z| z.re), &(&r0 / (2.0 * PI)), 1e-14);
            assert!(m.iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn fourier_pair_roundtrip() {
        let p = ar1(4, 400, 3, 0.6);
        for window in [LagWindow::Bartlett, LagWindow::Rectangular] {
            let l = 6;
            let sdf = spectral_density_flow(&p, l, &uniform(4 * l + 1), window).unwrap();
            for h in 0..=l as i64 {
                let r = autocov(&p, h as usize).unwrap() * window.weight(h as usize, l);
                let back = invert_sdf(&sdf, h).unwrap();
                assert!((back.map(|z| z.re) - &r).norm() <= 1e-8 * r.norm().max(1.0));
                let neg = invert_sdf(&sdf, -h).unwrap();
                assert!((neg.map(|z| z.re) - r.transpose()).norm() <= 1e-8 * r.norm().max(1.0));
            }
            for h in [l as i64 + 1, 2 * l as i64] {
                assert!(invert_sdf(&sdf, h).unwrap().norm() <= 1e-8);
            }
        }
        let sdf = spectral_density_flow(&p, 6, &uniform(12), LagWindow::Bartlett).unwrap();
        assert!(matches!(
            invert_sdf(&sdf, 0),
            Err(BwError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn flat_spectrum_inverts_to_constant() {
        let c = DMatrix::<f64>::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = c.map(|x| Complex64::new(x / (2.0 * PI), 0.0));
        let grid = Grid::uniform(9).unwrap();
        let mats = vec![crate::CovMatrix::new(m.clone()).unwrap(); 9];
        let sdf = SpectralFlow {
            flow: Flow::new(grid, mats).unwrap(),
            raw: vec![m; 9],
            max_lag: 2,
            window: LagWindow::Bartlett,
        };
        assert_mat_close(
            &invert_sdf(&sdf, 0).unwrap(),
            &c.map(|x| Complex64::new(x, 0.0)),
            1e-12,
        );
        assert!(invert_sdf(&sdf, 1).unwrap().norm() < 1e-12);
    }

    #[test]
    fn projected_spectra_are_hermitian_psd() {
        let p = ar1(5, 300, 4, 0.9);
        let sdf = spectral_density_flow(&p, 15, &uniform(31), LagWindow::Rectangular).unwrap();
        for m in sdf.flow.matrices() {
            assert_eq!(crate::psd::hermitian_residual(m.matrix()), 0.0);
            assert!(m.min_eigenvalue() >= -1e-12 * m.op_norm());
        }
        let bound: f64 = (0..=15usize)
            .map(|h| {
                LagWindow::Rectangular.weight(h, 15)
                    * autocov(&p, h).unwrap().trace().abs()
                    * if h == 0 { 1.0 } else { 2.0 }
            })
            .sum::<f64>()
            / (2.0 * PI);
        for m in sdf.flow.matrices() {
            assert!(m.trace_norm() <= bound * (1.0 + 1e-9) + 1e-9);
        }
    }

    #[test]
    fn refinement_shrinks_adjacent_distances() {
        let p = ar1(6, 2000, 2, 0.7);
        let max_adjacent = |n: usize| {
            let sdf = spectral_density_flow(&p, 10, &uniform(n), LagWindow::Bartlett).unwrap();
            sdf.flow
                .matrices()
                .windows(2)
                .map(|w| crate::geometry::bw_distance(&w[0], &w[1]).unwrap())
                .fold(0.0, f64::max)
        };
        assert!(max_adjacent(81) <= 0.5 * max_adjacent(41) * 1.05);
    }

    #[test]
    fn preprocessing_chain() {
        let p = SeriesPanel::new(0, DMatrix::from_fn(6, 1, |i, _| (i * i) as f64 + 1.0)).unwrap();
        let d = p.apply(&Preprocess::Difference).unwrap();
        assert_eq!(d.values.column(0).as_slice(), &[1.0, 3.0, 5.0, 7.0, 9.0]);
        let ma = d.apply(&Preprocess::MovingAverage(2)).unwrap();
        assert_eq!(ma.values.column(0).as_slice(), &[2.0, 4.0, 6.0, 8.0]);
        assert!(d.apply(&Preprocess::MovingAverage(5)).is_err());
        let c = p.apply_all(&[Preprocess::Log, Preprocess::Center]).unwrap();
        assert!(c.values.column(0).sum().abs() < 1e-12);
        assert!(c.centered);
        let neg = SeriesPanel::new(0, DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 2.0])).unwrap();
        assert!(neg.apply(&Preprocess::Log).is_err());
    }
}
