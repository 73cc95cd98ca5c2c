use bwflow::psd::{self, default_rank_tol, pinv_sqrt_psd, project_psd, range_projector, sqrt_psd};
use bwflow::random::{random_hermitian, random_psd};
use bwflow::{Complex64, CovMatrix, Real, RealOf, Scalar};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fro<S: Scalar>(m: &DMatrix<S>) -> f64 {
    psd::frobenius_inner(m, m).to_f64_lossy().sqrt()
}

fn low_rank<S: Scalar>(seed: u64, d: usize, rank: usize) -> CovMatrix<S> {
    random_psd::<S, _>(&mut ChaCha8Rng::seed_from_u64(seed), d, rank)
}

fn sqrt_squares_back<S: Scalar>(seed: u64, d: usize, rank: usize) -> Result<(), TestCaseError> {
    let a = low_rank::<S>(seed, d, rank);
    let r = sqrt_psd(&a);
    let err = fro(&(r.matrix() * r.matrix() - a.matrix()));
    prop_assert!(err <= 1e-9 * fro(a.matrix()), "err {err}");
    prop_assert!(r.min_eigenvalue().to_f64_lossy() >= -1e-12);
    Ok(())
}

fn pinv_whitens_to_projector<S: Scalar>(
    seed: u64,
    d: usize,
    rank: usize,
) -> Result<(), TestCaseError> {
    let a = low_rank::<S>(seed, d, rank);
    let tol = default_rank_tol::<RealOf<S>>();
    let p = pinv_sqrt_psd(&a, tol);
    let proj = range_projector(&a, tol);
    let err = fro(&(&p * a.matrix() * &p - &proj));
    prop_assert!(err <= 1e-8, "err {err}");
    let trace: f64 = proj.trace().parts().0.to_f64_lossy();
    prop_assert!((trace - rank as f64).abs() < 1e-9, "rank {trace} vs {rank}");
    Ok(())
}

fn projection_is_idempotent_contraction<S: Scalar>(
    seed: u64,
    d: usize,
) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_hermitian::<S, _>(&mut rng, d);
    let b = random_hermitian::<S, _>(&mut rng, d);
    let pa = project_psd(&a).unwrap();
    let pb = project_psd(&b).unwrap();
    prop_assert!(pa.min_eigenvalue().to_f64_lossy() >= -1e-12);
    let again = project_psd(pa.matrix()).unwrap();
    prop_assert!(fro(&(again.matrix() - pa.matrix())) <= 1e-10 * (1.0 + fro(pa.matrix())));
    let lhs = fro(&(pa.matrix() - pb.matrix()));
    let rhs = fro(&(&a - &b));
    prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-12, "{lhs} > {rhs}");
    Ok(())
}

fn norms_are_ordered<S: Scalar>(seed: u64, d: usize, rank: usize) -> Result<(), TestCaseError> {
    let a = low_rank::<S>(seed, d, rank);
    let (op, hs, tr) = (
        a.op_norm().to_f64_lossy(),
        a.hs_norm().to_f64_lossy(),
        a.trace_norm().to_f64_lossy(),
    );
    prop_assert!(
        op <= hs * (1.0 + 1e-12) && hs <= tr * (1.0 + 1e-12),
        "{op} {hs} {tr}"
    );
    prop_assert!((tr - a.trace().to_f64_lossy()).abs() <= 1e-10 * tr.max(1.0));
    Ok(())
}

fn shape() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..12).prop_flat_map(|(seed, d)| (Just(seed), Just(d), 1..=d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sqrt_squares_back_real((seed, d, rank) in shape()) {
        sqrt_squares_back::<f64>(seed, d, rank)?;
    }

    #[test]
    fn sqrt_squares_back_complex((seed, d, rank) in shape()) {
        sqrt_squares_back::<Complex64>(seed, d, rank)?;
    }

    #[test]
    fn pinv_sqrt_whitens_onto_range_real((seed, d, rank) in shape()) {
        pinv_whitens_to_projector::<f64>(seed, d, rank)?;
    }

    #[test]
    fn pinv_sqrt_whitens_onto_range_complex((seed, d, rank) in shape()) {
        pinv_whitens_to_projector::<Complex64>(seed, d, rank)?;
    }

    #[test]
    fn psd_projection_real(seed in any::<u64>(), d in 1usize..10) {
        projection_is_idempotent_contraction::<f64>(seed, d)?;
    }

    #[test]
    fn psd_projection_complex(seed in any::<u64>(), d in 1usize..10) {
        projection_is_idempotent_contraction::<Complex64>(seed, d)?;
    }

    #[test]
    fn schatten_norms_ordered_real((seed, d, rank) in shape()) {
        norms_are_ordered::<f64>(seed, d, rank)?;
    }

    #[test]
    fn schatten_norms_ordered_complex((seed, d, rank) in shape()) {
        norms_are_ordered::<Complex64>(seed, d, rank)?;
    }
}
