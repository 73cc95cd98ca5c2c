//! Functional PCA of covariance flows in the tangent space of their mean.
//!
//! Each flow is lifted to `chi(t) = (T_{M(t)}^{F(t)} - I) M(t)^{1/2}`, a field
//! of matrices in a flat Hilbert space with inner product
//! `sum_t w_t Re tr(A_t B_t^*)`. The empirical covariance is diagonalized
//! through the `n x n` Gram matrix of the lifted fields.

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, One, Zero};
use rayon::prelude::*;

use crate::error::{BwError, Result};
use crate::flow::{Flow, FlowSet, Grid, Quadrature};
use crate::geometry::TransportBase;
use crate::psd::{self, default_rank_tol, frobenius_inner, hermitian_part, op_norm, CovMatrix};
use crate::scalar::{Real, RealOf, Scalar};

/// A field of embedded tangent matrices on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField<S: Scalar> {
    pub grid: Grid<RealOf<S>>,
    pub mats: Vec<DMatrix<S>>,
}

impl<S: Scalar> TangentField<S> {
    pub fn zeros(grid: Grid<RealOf<S>>, dim: usize) -> Self {
        let mats = vec![DMatrix::zeros(dim, dim); grid.len()];
        TangentField { grid, mats }
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    /// `sum_t w_t Re tr(A_t B_t^*)`.
    pub fn inner(&self, other: &Self, quad: &Quadrature<RealOf<S>>) -> RealOf<S> {
        self.mats
            .iter()
            .zip(&other.mats)
            .zip(&quad.weights)
            .fold(RealOf::<S>::zero(), |acc, ((a, b), &w)| {
                acc + w * frobenius_inner(a, b)
            })
    }

    pub fn norm(&self, quad: &Quadrature<RealOf<S>>) -> RealOf<S> {
        Float::sqrt(Float::max(self.inner(self, quad), RealOf::<S>::zero()))
    }

    /// `self + factor * other`, in place.
    pub fn add_scaled(&mut self, other: &Self, factor: RealOf<S>) {
        let f = S::from_real(factor);
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b * f;
        }
    }
}

fn check_grids<S: Scalar>(a: &Grid<RealOf<S>>, b: &Grid<RealOf<S>>) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(BwError::GridMismatch)
    }
}

/// Lifts every flow of `set` to the tangent space along `mean`.
pub fn log_field<S: Scalar>(set: &FlowSet<S>, mean: &Flow<S>) -> Result<Vec<TangentField<S>>> {
    check_grids::<S>(set.grid(), mean.grid())?;
    if set.dim() != mean.dim() {
        return Err(BwError::DimMismatch {
            left: mean.dim(),
            right: set.dim(),
        });
    }
    let m = mean.len();
    // per_time[t][i]
    let per_time: Vec<Vec<DMatrix<S>>> = (0..m)
        .into_par_iter()
        .map(|t| {
            let base = TransportBase::new(mean.at(t), default_rank_tol());
            set.flows()
                .iter()
                .enumerate()
                .map(|(i, f)| embedded_log(&base, f.at(t)).map_err(|e| lift_error(e, i, t)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fields: Vec<TangentField<S>> = (0..set.len())
        .map(|_| TangentField {
            grid: mean.grid().clone(),
            mats: Vec::with_capacity(m),
        })
        .collect();
    for column in per_time {
        for (field, mat) in fields.iter_mut().zip(column) {
            field.mats.push(mat);
        }
    }
    Ok(fields)
}

/// Lift of a single flow along `mean`.
pub fn log_field_one<S: Scalar>(flow: &Flow<S>, mean: &Flow<S>) -> Result<TangentField<S>> {
    check_grids::<S>(flow.grid(), mean.grid())?;
    let mats = (0..mean.len())
        .map(|t| {
            let base = TransportBase::new(mean.at(t), default_rank_tol());
            embedded_log(&base, flow.at(t)).map_err(|e| lift_error(e, 0, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentField {
        grid: mean.grid().clone(),
        mats,
    })
}

fn embedded_log<S: Scalar>(base: &TransportBase<S>, g: &CovMatrix<S>) -> Result<DMatrix<S>> {
    let n = g.dim();
    let t = base.map_to(g)?;
    Ok((t - DMatrix::<S>::identity(n, n)) * base.sqrt())
}

fn lift_error(e: BwError, flow: usize, time: usize) -> BwError {
    match e {
        BwError::KernelNotNested { .. } => BwError::KernelNotNestedAt { flow, time },
        other => other,
    }
}

/// Norm of the average lifted field and the average field norm; their ratio
/// measures how far the base flow is from being the empirical mean.
pub fn centering_residual<S: Scalar>(fields: &[TangentField<S>]) -> (RealOf<S>, RealOf<S>) {
    let quad = fields[0].grid.quadrature();
    let inv = RealOf::<S>::one() / RealOf::<S>::c(fields.len() as f64);
    let mut avg = TangentField::zeros(fields[0].grid.clone(), fields[0].dim());
    let mut scale = RealOf::<S>::zero();
    for f in fields {
        avg.add_scaled(f, inv);
        scale += f.norm(&quad) * inv;
    }
    (avg.norm(&quad), scale)
}

/// A fitted tangent PCA model.
#[derive(Debug, Clone)]
pub struct PcaModel<S: Scalar> {
    pub mean: Flow<S>,
    /// All eigenvalues of the empirical covariance (`n` of them), descending.
    pub eigenvalues: Vec<RealOf<S>>,
    /// Orthonormal embedded eigenfields for the leading nonzero eigenvalues.
    pub components: Vec<TangentField<S>>,
    /// `n x K` matrix of scores `<chi_i, phi_k>`.
    pub scores: DMatrix<RealOf<S>>,
    /// `(1/n) sum_i ||chi_i||^2`.
    pub total_variance: RealOf<S>,
    /// Norm of the average lifted field relative to the average field norm.
    pub centering_residual: RealOf<S>,
}

impl<S: Scalar> PcaModel<S> {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Grid<RealOf<S>> {
        self.mean.grid()
    }

    /// Share of total variance carried by each of the `n` eigenvalues.
    pub fn variance_fractions(&self) -> Vec<RealOf<S>> {
        if self.total_variance <= RealOf::<S>::zero() {
            return vec![RealOf::<S>::zero(); self.eigenvalues.len()];
        }
        self.eigenvalues
            .iter()
            .map(|&l| l / self.total_variance)
            .collect()
    }

    /// `sum_{k < K} xi_{ik} phi_k` for training flow `i`.
    pub fn reconstruct(&self, i: usize, k: usize) -> TangentField<S> {
        let mut out = TangentField::zeros(self.grid().clone(), self.mean.dim());
        for (c, comp) in self.components.iter().enumerate().take(k) {
            out.add_scaled(comp, self.scores[(i, c)]);
        }
        out
    }

    /// Un-embedded direction `Psi_k(t) = phi_k(t) M(t)^{-1/2}` (Hermitian part).
    pub fn direction(&self, k: usize) -> Result<Vec<DMatrix<S>>> {
        let comp = self.components.get(k).ok_or(BwError::KOutOfRange {
            k,
            available: self.components.len(),
        })?;
        Ok(comp
            .mats
            .iter()
            .zip(self.mean.matrices())
            .map(|(phi, m)| hermitian_part(&(phi * psd::pinv_sqrt_psd(m, default_rank_tol()))))
            .collect())
    }

    /// Largest admissible `|lambda|` for [`mode_of_variation`] along component `k`.
    pub fn lambda_max(&self, k: usize) -> Result<RealOf<S>> {
        let dirs = self.direction(k)?;
        let sup = dirs
            .iter()
            .map(op_norm)
            .fold(RealOf::<S>::zero(), Float::max);
        Ok(RealOf::<S>::one() / (sup + RealOf::<S>::c(1e-6)))
    }
}

/// Fits tangent PCA to lifted fields with `k` requested components.
///
/// Fewer than `k` components are kept when the Gram matrix has fewer nonzero
/// eigenvalues; identical flows give a model with no components.
pub fn fit_pca<S: Scalar>(
    mean: Flow<S>,
    fields: &[TangentField<S>],
    k: usize,
) -> Result<PcaModel<S>> {
    let n = fields.len();
    if n == 0 {
        return Err(BwError::Empty("fields"));
    }
    if k > n {
        return Err(BwError::KTooLarge { k, n });
    }
    for f in fields {
        check_grids::<S>(&f.grid, mean.grid())?;
    }
    let quad = mean.grid().quadrature();
    let gram = gram_matrix(fields, &quad);
    let nr = RealOf::<S>::c(n as f64);
    let total_variance = gram.trace() / nr;

    let eig = gram.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // Gram eigenvalues below this are roundoff: relative to the Gram trace,
    // and absolute against the size of the mean flow (identical flows lift to
    // fields of pure noise).
    let mean_scale = mean
        .matrices()
        .iter()
        .zip(&quad.weights)
        .fold(RealOf::<S>::zero(), |acc, (m, &w)| acc + w * m.trace());
    let cutoff = Float::max(
        RealOf::<S>::c(1e-12) * gram.trace(),
        nr * RealOf::<S>::c(1e-20) * mean_scale,
    );
    let mu: Vec<RealOf<S>> = order
        .iter()
        .map(|&j| eig.eigenvalues[j])
        .map(|m| if m > cutoff { m } else { RealOf::<S>::zero() })
        .collect();
    let eigenvalues: Vec<RealOf<S>> = mu.iter().map(|&m| m / nr).collect();
    let kept = mu
        .iter()
        .take(k)
        .take_while(|&&m| m > RealOf::<S>::zero())
        .count();

    let mut components = Vec::with_capacity(kept);
    let mut scores = DMatrix::<RealOf<S>>::zeros(n, kept);
    for c in 0..kept {
        let v: DVector<RealOf<S>> = eig.eigenvectors.column(order[c]).into_owned();
        let root = Float::sqrt(mu[c]);
        let mut phi = TangentField::zeros(mean.grid().clone(), mean.dim());
        for (i, f) in fields.iter().enumerate() {
            phi.add_scaled(f, v[i] / root);
            scores[(i, c)] = root * v[i];
        }
        components.push(phi);
    }
    let (avg, scale) = centering_residual(fields);
    let centering_residual = if scale > RealOf::<S>::zero() {
        avg / scale
    } else {
        RealOf::<S>::zero()
    };
    Ok(PcaModel {
        mean,
        eigenvalues,
        components,
        scores,
        total_variance,
        centering_residual,
    })
}

/// `G_ij = <chi_i, chi_j>`, filled in parallel over rows.
pub fn gram_matrix<S: Scalar>(
    fields: &[TangentField<S>],
    quad: &Quadrature<RealOf<S>>,
) -> DMatrix<RealOf<S>> {
    let n = fields.len();
    let rows: Vec<Vec<RealOf<S>>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| fields[i].inner(&fields[j], quad)).collect())
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            g[(i, i + off)] = v;
            g[(i + off, i)] = v;
        }
    }
    g
}

/// Lifts `set` at `mean` and fits PCA in one call.
pub fn tangent_pca<S: Scalar>(set: &FlowSet<S>, mean: Flow<S>, k: usize) -> Result<PcaModel<S>> {
    let fields = log_field(set, &mean)?;
    fit_pca(mean, &fields, k)
}

/// The flow `t -> (lambda Psi_k(t) + I) M(t) (lambda Psi_k(t) + I)`.
pub fn mode_of_variation<S: Scalar>(
    model: &PcaModel<S>,
    k: usize,
    lambda: RealOf<S>,
) -> Result<Flow<S>> {
    let max = model.lambda_max(k)?;
    if Float::abs(lambda) > max {
        return Err(BwError::LambdaTooLarge {
            lambda: lambda.to_f64_lossy(),
            max: max.to_f64_lossy(),
        });
    }
    if lambda.is_zero() {
        return Ok(model.mean.clone());
    }
    let dirs = model.direction(k)?;
    let d = model.mean.dim();
    let mats = dirs
        .iter()
        .zip(model.mean.matrices())
        .map(|(psi, m)| {
            let a = psi * S::from_real(lambda) + DMatrix::<S>::identity(d, d);
            psd::project_psd(&hermitian_part(&(&a * m.matrix() * &a)))
        })
        .collect::<Result<Vec<_>>>()?;
    Flow::new(model.grid().clone(), mats)
}

/// Scores of a new flow against a fitted model.
pub fn project_scores<S: Scalar>(flow: &Flow<S>, model: &PcaModel<S>) -> Result<Vec<RealOf<S>>> {
    if flow.dim() != model.mean.dim() {
        return Err(BwError::DimMismatch {
            left: model.mean.dim(),
            right: flow.dim(),
        });
    }
    let field = log_field_one(flow, &model.mean)?;
    let quad = model.grid().quadrature();
    Ok(model
        .components
        .iter()
        .map(|c| field.inner(c, &quad))
        .collect())
}
