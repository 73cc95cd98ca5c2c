//! Scalar fields the geometry runs over.
//!
//! Every matrix routine in this crate is written once against [`Scalar`],
//! which covers real symmetric (`f32`, `f64`) and complex Hermitian
//! (`Complex<f32>`, `Complex<f64>`) matrices. Hermitian transpose replaces
//! transpose everywhere, so the real case is the complex case with zero
//! imaginary parts.

use std::fmt::{Debug, Display};

use nalgebra::{ComplexField, RealField};
use num_complex::Complex;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Which scalar field a matrix lives over. Mirrors the BWF1 header byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    Real,
    Complex,
}

impl ScalarKind {
    pub fn code(self) -> u8 {
        match self {
            ScalarKind::Real => 0,
            ScalarKind::Complex => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScalarKind::Real),
            1 => Some(ScalarKind::Complex),
            _ => None,
        }
    }
}

/// Real floating-point type underlying a [`Scalar`].
pub trait Real:
    RealField + Float + FromPrimitive + ToPrimitive + Copy + Send + Sync + Debug + Display + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant fits the real type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Relative eigenvalue tolerance for PSD checks and clamping: `1e-10`
    /// in double precision, widened for `f32` so it stays above round-off.
    #[inline]
    fn psd_tol() -> Self {
        Float::max(Self::c(1e-10), Self::c(1e3) * Float::epsilon())
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A matrix entry type: real or complex, single or double precision.
pub trait Scalar: ComplexField<RealField: Real> + Copy + Send + Sync + 'static {
    const KIND: ScalarKind;

    /// Builds a scalar from real and imaginary parts. Returns `None` when the
    /// field is real and `im` is nonzero.
    fn from_parts(re: Self::RealField, im: Self::RealField) -> Option<Self>;

    /// Real and imaginary parts (imaginary part is zero for real fields).
    fn parts(self) -> (Self::RealField, Self::RealField);

    fn is_finite_scalar(self) -> bool {
        let (re, im) = self.parts();
        Float::is_finite(re) && Float::is_finite(im)
    }
}

macro_rules! impl_real_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const KIND: ScalarKind = ScalarKind::Real;

            fn from_parts(re: $t, im: $t) -> Option<Self> {
                (im == 0.0).then_some(re)
            }

            fn parts(self) -> ($t, $t) {
                (self, 0.0)
            }
        }
    };
}

macro_rules! impl_complex_scalar {
    ($t:ty) => {
        impl Scalar for Complex<$t> {
            const KIND: ScalarKind = ScalarKind::Complex;

            fn from_parts(re: $t, im: $t) -> Option<Self> {
                Some(Complex::new(re, im))
            }

            fn parts(self) -> ($t, $t) {
                (self.re, self.im)
            }
        }
    };
}

impl_real_scalar!(f32);
impl_real_scalar!(f64);
impl_complex_scalar!(f32);
impl_complex_scalar!(f64);

/// Shorthand for the real type of a scalar field.
pub type RealOf<S> = <S as ComplexField>::RealField;
