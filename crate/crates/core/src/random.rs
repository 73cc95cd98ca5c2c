//! Random matrix generators for tests, benchmarks and simulations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::psd::CovMatrix;
use crate::scalar::{Real, RealOf, Scalar};

/// Standard Gaussian scalar; complex fields draw independent real and
/// imaginary parts.
pub fn gaussian_scalar<S: Scalar, G: Rng + ?Sized>(rng: &mut G) -> S {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = match S::KIND {
        crate::ScalarKind::Real => 0.0,
        crate::ScalarKind::Complex => StandardNormal.sample(rng),
    };
    S::from_parts(RealOf::<S>::c(re), RealOf::<S>::c(im))
        .expect("imaginary part is zero for real fields")
}

pub fn gaussian_matrix<S: Scalar, G: Rng + ?Sized>(
    rng: &mut G,
    rows: usize,
    cols: usize,
) -> DMatrix<S> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian_scalar::<S, G>(rng))
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<S: Scalar, G: Rng + ?Sized>(rng: &mut G, dim: usize) -> DMatrix<S> {
    let g = gaussian_matrix::<S, G>(rng, dim, dim);
    crate::psd::hermitian_part(&g)
}

/// Wishart-type PSD matrix `G G* / rank` of the given rank.
pub fn random_psd<S: Scalar, G: Rng + ?Sized>(
    rng: &mut G,
    dim: usize,
    rank: usize,
) -> CovMatrix<S> {
    let g = gaussian_matrix::<S, G>(rng, dim, rank);
    let scale = S::from_real(RealOf::<S>::c(1.0 / rank.max(1) as f64));
    CovMatrix::from_congruence(&g * g.adjoint() * scale)
}

/// Well-conditioned positive-definite matrix: full-rank Wishart plus a ridge.
pub fn random_pd<S: Scalar, G: Rng + ?Sized>(rng: &mut G, dim: usize) -> CovMatrix<S> {
    let base = random_psd::<S, G>(rng, dim, dim).into_matrix();
    let ridge = DMatrix::<S>::identity(dim, dim) * S::from_real(RealOf::<S>::c(0.1));
    CovMatrix::new_unchecked(base + ridge)
}
