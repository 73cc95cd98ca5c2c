//! Dense Hermitian matrix calculus: eigendecomposition, square roots,
//! pseudo-inverse square roots and projection onto the PSD cone.
//!
//! All matrix functions go through a Hermitian eigendecomposition. Inputs are
//! expected to be small (a few hundred rows at most).

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, One, Zero};

use crate::error::{BwError, Result};
use crate::scalar::{Real, RealOf, Scalar};

/// Relative tolerance of the Hermitian symmetry check.
pub fn hermitian_tol<R: Real>() -> R {
    Float::max(R::c(1e-12), R::c(100.0) * Float::epsilon())
}

/// Default rank cutoff (relative to the largest eigenvalue) for pseudo-inverses.
pub fn default_rank_tol<R: Real>() -> R {
    R::psd_tol()
}

/// A Hermitian positive-semidefinite matrix.
///
/// Construction through [`CovMatrix::new`] checks finiteness, Hermitian
/// symmetry (relative `1e-12`) and positivity (smallest eigenvalue at least
/// `-1e-10` times the largest). The stored entries are kept exactly as given.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix<S: Scalar>(DMatrix<S>);

impl<S: Scalar> CovMatrix<S> {
    pub fn new(m: DMatrix<S>) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m)?;
        check_hermitian(&m)?;
        let eig = eig_unchecked(&m);
        check_psd_values(&eig.values)?;
        Ok(CovMatrix(m))
    }

    /// Wraps a matrix without validation. The caller guarantees the invariants.
    pub fn new_unchecked(m: DMatrix<S>) -> Self {
        debug_assert!(m.is_square());
        CovMatrix(m)
    }

    /// Wraps the Hermitian part of `m` without a PSD check. Used for results of
    /// congruences, which are PSD up to round-off.
    pub(crate) fn from_congruence(m: DMatrix<S>) -> Self {
        CovMatrix(hermitian_part(&m))
    }

    pub fn identity(dim: usize) -> Self {
        CovMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        CovMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(values: &[RealOf<S>]) -> Result<Self> {
        let diag = DVector::from_iterator(values.len(), values.iter().map(|&v| S::from_real(v)));
        Self::new(DMatrix::from_diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<S> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<S> {
        self.0
    }

    pub fn trace(&self) -> RealOf<S> {
        self.0
            .diagonal()
            .iter()
            .fold(RealOf::<S>::zero(), |acc, v| acc + v.real())
    }

    pub fn eig(&self) -> EigenPair<S> {
        eig_unchecked(&self.0)
    }

    /// Smallest eigenvalue; used by degeneracy checks.
    pub fn min_eigenvalue(&self) -> RealOf<S> {
        let eig = self.eig();
        eig.values[eig.values.len() - 1]
    }

    /// True when every eigenvalue exceeds `rank_tol` times the largest.
    pub fn is_positive_definite(&self, rank_tol: RealOf<S>) -> bool {
        if self.dim() == 0 {
            return false;
        }
        let eig = self.eig();
        let max = eig.values[0];
        max > RealOf::<S>::zero() && eig.values[eig.values.len() - 1] > rank_tol * max
    }

    /// Trace norm `||A||_1` (sum of absolute eigenvalues).
    pub fn trace_norm(&self) -> RealOf<S> {
        trace_norm(&self.0)
    }

    /// Hilbert-Schmidt (Frobenius) norm `||A||_2`.
    pub fn hs_norm(&self) -> RealOf<S> {
        self.0.norm()
    }

    /// Operator norm `||A||_inf` (largest absolute eigenvalue).
    pub fn op_norm(&self) -> RealOf<S> {
        op_norm(&self.0)
    }
}

impl<S: Scalar> AsRef<DMatrix<S>> for CovMatrix<S> {
    fn as_ref(&self) -> &DMatrix<S> {
        &self.0
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenPair<S: Scalar> {
    pub values: DVector<RealOf<S>>,
    /// Columns are the eigenvectors, in the order of `values`.
    pub vectors: DMatrix<S>,
}

impl<S: Scalar> EigenPair<S> {
    /// `V diag(f(lambda)) V*`.
    pub fn map_values(&self, f: impl Fn(RealOf<S>) -> RealOf<S>) -> DMatrix<S> {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let s = S::from_real(f(lambda));
            scaled.column_mut(j).iter_mut().for_each(|x| *x *= s);
        }
        let out = scaled * self.vectors.adjoint();
        hermitian_part(&out)
    }

    pub fn reconstruct(&self) -> DMatrix<S> {
        self.map_values(|x| x)
    }

    pub fn max_value(&self) -> RealOf<S> {
        if self.values.is_empty() {
            RealOf::<S>::zero()
        } else {
            self.values[0]
        }
    }
}

/// Eigendecomposition of a Hermitian matrix with input validation.
pub fn hermitian_eig<S: Scalar>(a: &DMatrix<S>) -> Result<EigenPair<S>> {
    check_square(a)?;
    check_finite(a)?;
    check_hermitian(a)?;
    Ok(eig_unchecked(a))
}

/// Eigendecomposition of the Hermitian part of `a`, no validation.
pub(crate) fn eig_unchecked<S: Scalar>(a: &DMatrix<S>) -> EigenPair<S> {
    let n = a.nrows();
    if n == 0 {
        return EigenPair {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenPair { values, vectors }
}

/// Unique PSD square root. Eigenvalues within tolerance below zero are
/// clamped to zero before rooting.
pub fn sqrt_psd<S: Scalar>(a: &CovMatrix<S>) -> CovMatrix<S> {
    CovMatrix(sqrt_of_eig(&a.eig()))
}

/// Eigenvalues at or below the roundoff level `dim * eps * lambda_max` are
/// treated as zero: their square roots would amplify noise to `sqrt(eps)`.
pub(crate) fn sqrt_of_eig<S: Scalar>(eig: &EigenPair<S>) -> DMatrix<S> {
    let zero = RealOf::<S>::zero();
    let floor = roundoff_floor(eig);
    eig.map_values(|l| if l > floor { Float::sqrt(l) } else { zero })
}

pub(crate) fn roundoff_floor<S: Scalar>(eig: &EigenPair<S>) -> RealOf<S> {
    let n = RealOf::<S>::c(eig.values.len() as f64);
    n * RealOf::<S>::epsilon() * Float::max(eig.max_value(), RealOf::<S>::zero())
}

/// Checks positivity of an arbitrary Hermitian matrix and returns its square root.
pub fn try_sqrt_psd<S: Scalar>(a: &DMatrix<S>) -> Result<CovMatrix<S>> {
    let eig = hermitian_eig(a)?;
    check_psd_values(&eig.values)?;
    Ok(CovMatrix(sqrt_of_eig(&eig)))
}

/// Pseudo-inverse square root: eigenvalues at least `rank_tol * lambda_max`
/// map to `lambda^(-1/2)`, all others to zero. The zero matrix maps to zero.
pub fn pinv_sqrt_psd<S: Scalar>(a: &CovMatrix<S>, rank_tol: RealOf<S>) -> DMatrix<S> {
    pinv_sqrt_of_eig(&a.eig(), rank_tol)
}

pub(crate) fn pinv_sqrt_of_eig<S: Scalar>(eig: &EigenPair<S>, rank_tol: RealOf<S>) -> DMatrix<S> {
    let zero = RealOf::<S>::zero();
    let max = eig.max_value();
    if max <= zero {
        let n = eig.values.len();
        return DMatrix::zeros(n, n);
    }
    let cutoff = rank_tol * max;
    eig.map_values(|l| {
        if l >= cutoff && l > zero {
            RealOf::<S>::one() / Float::sqrt(l)
        } else {
            zero
        }
    })
}

/// Orthogonal projector onto the span of eigenvectors with eigenvalue at least
/// `rank_tol * lambda_max`.
pub fn range_projector<S: Scalar>(a: &CovMatrix<S>, rank_tol: RealOf<S>) -> DMatrix<S> {
    range_projector_of_eig(&a.eig(), rank_tol)
}

pub(crate) fn range_projector_of_eig<S: Scalar>(
    eig: &EigenPair<S>,
    rank_tol: RealOf<S>,
) -> DMatrix<S> {
    let zero = RealOf::<S>::zero();
    let one = RealOf::<S>::one();
    let max = eig.max_value();
    if max <= zero {
        let n = eig.values.len();
        return DMatrix::zeros(n, n);
    }
    let cutoff = rank_tol * max;
    eig.map_values(|l| if l >= cutoff && l > zero { one } else { zero })
}

/// Frobenius-nearest PSD matrix: negative eigenvalues clamped to zero.
pub fn project_psd<S: Scalar>(a: &DMatrix<S>) -> Result<CovMatrix<S>> {
    check_square(a)?;
    check_finite(a)?;
    check_hermitian(a)?;
    Ok(project_psd_unchecked(a))
}

/// PSD projection of the Hermitian part of `a`, skipping validation.
pub(crate) fn project_psd_unchecked<S: Scalar>(a: &DMatrix<S>) -> CovMatrix<S> {
    let eig = eig_unchecked(a);
    let zero = RealOf::<S>::zero();
    if eig.values.iter().all(|&l| l >= zero) {
        return CovMatrix(hermitian_part(a));
    }
    CovMatrix(eig.map_values(|l| if l > zero { l } else { zero }))
}

/// `(A + A*) / 2`.
pub fn hermitian_part<S: Scalar>(a: &DMatrix<S>) -> DMatrix<S> {
    let half = S::from_real(RealOf::<S>::c(0.5));
    (a + a.adjoint()) * half
}

/// Largest entrywise deviation from Hermitian symmetry, relative to the largest
/// entry magnitude.
pub fn hermitian_residual<S: Scalar>(a: &DMatrix<S>) -> RealOf<S> {
    let zero = RealOf::<S>::zero();
    let n = a.nrows();
    let mut scale = zero;
    let mut resid = zero;
    for i in 0..n {
        for j in 0..n {
            scale = Float::max(scale, a[(i, j)].modulus());
            if j >= i {
                resid = Float::max(resid, (a[(i, j)] - a[(j, i)].conjugate()).modulus());
            }
        }
    }
    if scale > zero {
        resid / scale
    } else {
        zero
    }
}

/// Real inner product `Re tr(A B*)` on (not necessarily Hermitian) matrices.
pub fn frobenius_inner<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> RealOf<S> {
    a.iter()
        .zip(b.iter())
        .fold(RealOf::<S>::zero(), |acc, (&x, &y)| {
            acc + (x * y.conjugate()).real()
        })
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm<S: Scalar>(a: &DMatrix<S>) -> RealOf<S> {
    eig_unchecked(a)
        .values
        .iter()
        .fold(RealOf::<S>::zero(), |acc, &l| acc + Float::abs(l))
}

/// Operator norm of a Hermitian matrix.
pub fn op_norm<S: Scalar>(a: &DMatrix<S>) -> RealOf<S> {
    eig_unchecked(a)
        .values
        .iter()
        .fold(RealOf::<S>::zero(), |acc, &l| {
            Float::max(acc, Float::abs(l))
        })
}

/// Operator norm of an arbitrary square matrix (largest singular value).
pub fn spectral_norm<S: Scalar>(a: &DMatrix<S>) -> RealOf<S> {
    let gram = a.adjoint() * a;
    Float::sqrt(Float::max(op_norm(&gram), RealOf::<S>::zero()))
}

fn check_square<S: Scalar>(a: &DMatrix<S>) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(BwError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

fn check_finite<S: Scalar>(a: &DMatrix<S>) -> Result<()> {
    if a.iter().all(|x| x.is_finite_scalar()) {
        Ok(())
    } else {
        Err(BwError::NonFinite)
    }
}

fn check_hermitian<S: Scalar>(a: &DMatrix<S>) -> Result<()> {
    let resid = hermitian_residual(a);
    if resid <= hermitian_tol() {
        Ok(())
    } else {
        Err(BwError::NonHermitian {
            residual: resid.to_f64_lossy(),
        })
    }
}

fn check_psd_values<R: Real>(values: &DVector<R>) -> Result<()> {
    if values.is_empty() {
        return Ok(());
    }
    let max = values[0];
    let min = values[values.len() - 1];
    if min >= -R::psd_tol() * Float::max(max, R::zero()) {
        Ok(())
    } else {
        Err(BwError::NotPsd {
            min_eig: min.to_f64_lossy(),
            max_eig: max.to_f64_lossy(),
        })
    }
}
