//! Statistics for flows of covariance matrices under the Bures-Wasserstein
//! geometry.
//!
//! The crate is generic over the matrix entry type through [`Scalar`]; the
//! aliases below fix double precision for the common real and complex cases.

pub mod barycenter;
pub mod cluster;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod pca;
pub mod psd;
pub mod random;
pub mod scalar;
pub mod simgen;
pub mod smoothing;
pub mod spectral;

#[cfg(test)]
mod testutil;

pub use error::{BwError, Result};
pub use num_complex::Complex64;
pub use psd::{CovMatrix, EigenPair};
pub use scalar::{Real, RealOf, Scalar, ScalarKind};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type RealCov = CovMatrix<f64>;
pub type ComplexCov = CovMatrix<Complex64>;
