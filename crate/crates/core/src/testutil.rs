use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[track_caller]
pub fn assert_close(actual: f64, expected: f64, tol: f64) {
    assert!(
        (actual - expected).abs() <= tol,
        "expected {expected}, got {actual} (tol {tol})"
    );
}

#[track_caller]
pub fn assert_mat_close<S: Scalar<RealField = f64>>(
    actual: &DMatrix<S>,
    expected: &DMatrix<S>,
    tol: f64,
) {
    let diff = (actual - expected).norm();
    assert!(
        diff <= tol,
        "matrices differ by {diff} (tol {tol})\nactual {actual}\nexpected {expected}"
    );
}
