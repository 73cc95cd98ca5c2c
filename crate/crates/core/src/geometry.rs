//! Pointwise Bures-Wasserstein geometry on covariance matrices.
//!
//! For PSD `F`, `G` the distance is
//! `sqrt(tr F + tr G - 2 tr (G^{1/2} F G^{1/2})^{1/2})`, the optimal map is
//! `T = F^{-1/2} (F^{1/2} G F^{1/2})^{1/2} F^{-1/2}` (pseudo-inverse on the
//! kernel of `F`), geodesics are `[lT + (1-l)I] F [lT + (1-l)I]`, and tangent
//! vectors at `F` are Hermitian matrices with inner product `tr(U F V)`.

use nalgebra::DMatrix;
use num_traits::{Float, One, Zero};

use crate::error::{BwError, Result};
use crate::psd::{
    self, default_rank_tol, frobenius_inner, hermitian_part, hermitian_residual, hermitian_tol,
    op_norm, CovMatrix, EigenPair,
};
use crate::scalar::{Real, RealOf, Scalar};

/// A tangent vector at a covariance matrix: a Hermitian matrix `Gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<S: Scalar>(DMatrix<S>);

impl<S: Scalar> TangentVector<S> {
    pub fn new(m: DMatrix<S>) -> Result<Self> {
        if !m.is_square() {
            return Err(BwError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if !m.iter().all(|x| x.is_finite_scalar()) {
            return Err(BwError::NonFinite);
        }
        let resid = hermitian_residual(&m);
        if resid > hermitian_tol() {
            return Err(BwError::NonHermitian {
                residual: resid.to_f64_lossy(),
            });
        }
        Ok(TangentVector(m))
    }

    /// Stores the Hermitian part of `m`.
    pub fn from_hermitian_part(m: &DMatrix<S>) -> Self {
        TangentVector(hermitian_part(m))
    }

    pub fn zeros(dim: usize) -> Self {
        TangentVector(DMatrix::zeros(dim, dim))
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

    pub fn scaled(&self, factor: RealOf<S>) -> Self {
        TangentVector(&self.0 * S::from_real(factor))
    }
}

/// Image of a tangent vector under `U -> U F^{1/2}`; generally not Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTangent<S: Scalar>(pub DMatrix<S>);

impl<S: Scalar> EmbeddedTangent<S> {
    pub fn matrix(&self) -> &DMatrix<S> {
        &self.0
    }

    pub fn hs_norm(&self) -> RealOf<S> {
        self.0.norm()
    }
}

/// A base point with its spectral data cached, for computing many maps or
/// distances out of the same matrix.
#[derive(Debug, Clone)]
pub struct TransportBase<S: Scalar> {
    base: CovMatrix<S>,
    sqrt: DMatrix<S>,
    pinv_sqrt: DMatrix<S>,
    range: DMatrix<S>,
    rank_tol: RealOf<S>,
}

impl<S: Scalar> TransportBase<S> {
    pub fn new(base: &CovMatrix<S>, rank_tol: RealOf<S>) -> Self {
        let eig = base.eig();
        Self::from_eig(base.clone(), &eig, rank_tol)
    }

    fn from_eig(base: CovMatrix<S>, eig: &EigenPair<S>, rank_tol: RealOf<S>) -> Self {
        TransportBase {
            sqrt: psd::sqrt_of_eig(eig),
            pinv_sqrt: psd::pinv_sqrt_of_eig(eig, rank_tol),
            range: psd::range_projector_of_eig(eig, rank_tol),
            base,
            rank_tol,
        }
    }

    pub fn base(&self) -> &CovMatrix<S> {
        &self.base
    }

    pub fn sqrt(&self) -> &DMatrix<S> {
        &self.sqrt
    }

    pub fn pinv_sqrt(&self) -> &DMatrix<S> {
        &self.pinv_sqrt
    }

    fn check_dim(&self, g: &CovMatrix<S>) -> Result<()> {
        if g.dim() == self.base.dim() {
            Ok(())
        } else {
            Err(BwError::DimMismatch {
                left: self.base.dim(),
                right: g.dim(),
            })
        }
    }

    /// `||G (I - P)||_F / ||G||_F` with `P` the range projector of the base.
    pub fn kernel_residual(&self, g: &CovMatrix<S>) -> RealOf<S> {
        let n = self.base.dim();
        let gnorm = g.matrix().norm();
        if gnorm.is_zero() {
            return RealOf::<S>::zero();
        }
        let complement = DMatrix::<S>::identity(n, n) - &self.range;
        (g.matrix() * complement).norm() / gnorm
    }

    fn middle_root(&self, g: &CovMatrix<S>) -> MiddleRoot<S> {
        middle_root(&self.sqrt, psd::sqrt_psd(g).matrix())
    }

    /// Optimal transport map from the base to `g`, Hermitian.
    pub fn map_to(&self, g: &CovMatrix<S>) -> Result<DMatrix<S>> {
        self.check_dim(g)?;
        let resid = self.kernel_residual(g);
        if resid > self.rank_tol {
            return Err(BwError::KernelNotNested {
                residual: resid.to_f64_lossy(),
            });
        }
        Ok(self.map_to_unchecked(g))
    }

    /// Optimal map without the kernel-nesting check (pseudo-inverse convention).
    pub fn map_to_unchecked(&self, g: &CovMatrix<S>) -> DMatrix<S> {
        let mid = self.middle_root(g);
        hermitian_part(&(&self.pinv_sqrt * mid.root * &self.pinv_sqrt))
    }

    /// Squared Bures-Wasserstein distance from the base to `g`.
    pub fn distance_sq_to(&self, g: &CovMatrix<S>) -> Result<RealOf<S>> {
        self.check_dim(g)?;
        let fid = self.middle_root(g).trace;
        let two = RealOf::<S>::c(2.0);
        Ok(Float::max(
            self.base.trace() + g.trace() - two * fid,
            RealOf::<S>::zero(),
        ))
    }

    pub fn distance_to(&self, g: &CovMatrix<S>) -> Result<RealOf<S>> {
        Ok(Float::sqrt(self.distance_sq_to(g)?))
    }

    /// `||P (T - I) P||_op` with `P` the range projector of the base; equals
    /// `||T - I||_op` for a positive definite base.
    pub fn range_residual(&self, t: &DMatrix<S>) -> RealOf<S> {
        op_norm(&(&self.range * t * &self.range - &self.range))
    }

    /// Checked map and squared distance from one middle factorization.
    pub fn map_and_distance_sq(&self, g: &CovMatrix<S>) -> Result<(DMatrix<S>, RealOf<S>)> {
        self.map_and_distance_sq_with_sqrt(g, psd::sqrt_psd(g).matrix())
    }

    /// As [`TransportBase::map_and_distance_sq`] with `G^{1/2}` supplied by
    /// the caller.
    pub fn map_and_distance_sq_with_sqrt(
        &self,
        g: &CovMatrix<S>,
        g_sqrt: &DMatrix<S>,
    ) -> Result<(DMatrix<S>, RealOf<S>)> {
        self.check_dim(g)?;
        let resid = self.kernel_residual(g);
        if resid > self.rank_tol {
            return Err(BwError::KernelNotNested {
                residual: resid.to_f64_lossy(),
            });
        }
        let mid = middle_root(&self.sqrt, g_sqrt);
        let map = hermitian_part(&(&self.pinv_sqrt * mid.root * &self.pinv_sqrt));
        let two = RealOf::<S>::c(2.0);
        let d2 = Float::max(
            self.base.trace() + g.trace() - two * mid.trace,
            RealOf::<S>::zero(),
        );
        Ok((map, d2))
    }
}

/// `(A G A)^{1/2}` and its trace for `A = F^{1/2}`.
struct MiddleRoot<S: Scalar> {
    root: DMatrix<S>,
    trace: RealOf<S>,
}

/// Built from the singular value decomposition `A G^{1/2} = U S V*`, so that
/// `(A G A)^{1/2} = U S U*`. Singular values are accurate to `eps * s_max`,
/// whereas rooting the eigenvalues of `A G A` only resolves `sqrt(eps)`.
///
/// The decomposition is read off the Hermitian eigenproblem of
/// `[[0, P], [P*, 0]]` with `P = A G^{1/2}`: its positive eigenvalues are the
/// singular values of `P` and the top halves of their eigenvectors are
/// `u_j / sqrt(2)`. nalgebra's SVD mishandles repeated zero singular values.
fn middle_root<S: Scalar>(a: &DMatrix<S>, g_sqrt: &DMatrix<S>) -> MiddleRoot<S> {
    let p = a * g_sqrt;
    let n = p.nrows();
    let mut jw = DMatrix::<S>::zeros(2 * n, 2 * n);
    jw.view_mut((0, n), (n, n)).copy_from(&p);
    jw.view_mut((n, 0), (n, n)).copy_from(&p.adjoint());
    let eig = jw.symmetric_eigen();
    let zero = RealOf::<S>::zero();
    let top = eig
        .eigenvalues
        .iter()
        .fold(zero, |acc, &s| Float::max(acc, Float::abs(s)));
    let floor = RealOf::<S>::c(n as f64) * RealOf::<S>::epsilon() * top;
    let mut root = DMatrix::<S>::zeros(n, n);
    let mut trace = zero;
    for (j, &s) in eig.eigenvalues.iter().enumerate() {
        if s > floor {
            let u = eig.eigenvectors.view((0, j), (n, 1));
            root += (u * u.adjoint()) * S::from_real(RealOf::<S>::c(2.0) * s);
            trace += s;
        }
    }
    MiddleRoot {
        root: hermitian_part(&root),
        trace,
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(BwError::DimMismatch { left: a, right: b })
    }
}

/// `tr (G^{1/2} F G^{1/2})^{1/2}`, computed with `G` as the outer factor.
pub fn fidelity_trace<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> Result<RealOf<S>> {
    check_same_dim(f.dim(), g.dim())?;
    let gs = psd::sqrt_psd(g);
    let fs = psd::sqrt_psd(f);
    Ok(middle_root(gs.matrix(), fs.matrix()).trace)
}

/// Squared Bures-Wasserstein distance.
pub fn bw_distance_sq<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> Result<RealOf<S>> {
    let fid = fidelity_trace(f, g)?;
    let two = RealOf::<S>::c(2.0);
    Ok(Float::max(
        f.trace() + g.trace() - two * fid,
        RealOf::<S>::zero(),
    ))
}

/// Bures-Wasserstein distance between two PSD matrices.
pub fn bw_distance<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> Result<RealOf<S>> {
    Ok(Float::sqrt(bw_distance_sq(f, g)?))
}

/// Optimal transport map pushing `N(0, F)` to `N(0, G)`.
///
/// Requires `ker F` to be contained in `ker G` up to `rank_tol`; the map is
/// zero on the kernel of `F`.
pub fn transport_map<S: Scalar>(
    f: &CovMatrix<S>,
    g: &CovMatrix<S>,
    rank_tol: RealOf<S>,
) -> Result<DMatrix<S>> {
    check_same_dim(f.dim(), g.dim())?;
    TransportBase::new(f, rank_tol).map_to(g)
}

/// McCann interpolant between `f0` (at 0) and `f1` (at 1).
pub fn geodesic<S: Scalar>(
    f0: &CovMatrix<S>,
    f1: &CovMatrix<S>,
    lambda: RealOf<S>,
) -> Result<CovMatrix<S>> {
    check_same_dim(f0.dim(), f1.dim())?;
    let zero = RealOf::<S>::zero();
    let one = RealOf::<S>::one();
    if !(lambda >= zero && lambda <= one) {
        return Err(BwError::LambdaOutOfRange(lambda.to_f64_lossy()));
    }
    if lambda == zero {
        return Ok(f0.clone());
    }
    let t = transport_map(f0, f1, default_rank_tol())?;
    if lambda == one {
        return Ok(f1.clone());
    }
    Ok(interpolate_with_map(f0, &t, lambda))
}

/// `[lT + (1-l)I] F [lT + (1-l)I]` for a precomputed map `T`.
pub(crate) fn interpolate_with_map<S: Scalar>(
    f0: &CovMatrix<S>,
    t: &DMatrix<S>,
    lambda: RealOf<S>,
) -> CovMatrix<S> {
    let n = f0.dim();
    let one = RealOf::<S>::one();
    let a = t * S::from_real(lambda) + DMatrix::<S>::identity(n, n) * S::from_real(one - lambda);
    CovMatrix::from_congruence(&a * f0.matrix() * &a)
}

/// `log_F(G) = T_F^G - I`.
pub fn log_map<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> Result<TangentVector<S>> {
    let t = transport_map(f, g, default_rank_tol())?;
    let n = f.dim();
    Ok(TangentVector(t - DMatrix::<S>::identity(n, n)))
}

/// `exp_F(Gamma) = (Gamma + I) F (Gamma + I)`, projected onto the PSD cone.
pub fn exp_map<S: Scalar>(f: &CovMatrix<S>, gamma: &TangentVector<S>) -> Result<CovMatrix<S>> {
    check_same_dim(f.dim(), gamma.dim())?;
    let n = f.dim();
    let a = gamma.matrix() + DMatrix::<S>::identity(n, n);
    Ok(psd::project_psd_unchecked(&(&a * f.matrix() * &a)))
}

/// Tangent-space inner product `Re tr(U F V)`.
pub fn tangent_inner<S: Scalar>(
    f: &CovMatrix<S>,
    u: &TangentVector<S>,
    v: &TangentVector<S>,
) -> Result<RealOf<S>> {
    check_same_dim(f.dim(), u.dim())?;
    check_same_dim(f.dim(), v.dim())?;
    let prod = u.matrix() * f.matrix() * v.matrix();
    Ok(prod.trace().real())
}

/// Canonical embedding `U -> U F^{1/2}` into Hilbert-Schmidt matrices.
pub fn embed<S: Scalar>(f: &CovMatrix<S>, u: &TangentVector<S>) -> Result<EmbeddedTangent<S>> {
    check_same_dim(f.dim(), u.dim())?;
    let root = psd::sqrt_psd(f);
    Ok(EmbeddedTangent(u.matrix() * root.matrix()))
}

/// Hilbert-Schmidt inner product of embedded tangents.
pub fn hs_inner<S: Scalar>(a: &EmbeddedTangent<S>, b: &EmbeddedTangent<S>) -> RealOf<S> {
    frobenius_inner(&a.0, &b.0)
}

/// Bound relating trace-norm distance to the Bures-Wasserstein distance:
/// `(tr(F)^{1/2} + tr(G)^{1/2}) * Pi(F, G)`.
pub fn trace_norm_bound<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> Result<RealOf<S>> {
    let d = bw_distance(f, g)?;
    Ok((Float::sqrt(f.trace()) + Float::sqrt(g.trace())) * d)
}
