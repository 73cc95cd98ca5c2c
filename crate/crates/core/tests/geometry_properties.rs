use bwflow::geometry::{
    bw_distance, exp_map, fidelity_trace, geodesic, log_map, trace_norm_bound, transport_map,
    TangentVector,
};
use bwflow::psd::{self, default_rank_tol, hermitian_part, project_psd, sqrt_psd};
use bwflow::random::{random_hermitian, random_pd, random_psd};
use bwflow::{Complex64, CovMatrix, Real, RealOf, Scalar};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fro<S: Scalar>(m: &DMatrix<S>) -> f64 {
    psd::frobenius_inner(m, m).to_f64_lossy().sqrt()
}

fn dist<S: Scalar>(f: &CovMatrix<S>, g: &CovMatrix<S>) -> f64 {
    bw_distance(f, g).unwrap().to_f64_lossy()
}

fn triple<S: Scalar>(seed: u64, d: usize, ranks: [usize; 3]) -> [CovMatrix<S>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ranks.map(|r| random_psd::<S, _>(&mut rng, d, r))
}

fn metric_axioms<S: Scalar>(seed: u64, d: usize, ranks: [usize; 3]) -> Result<(), TestCaseError> {
    let [f, g, h] = triple::<S>(seed, d, ranks);
    let scale =
        1.0 + f.trace().to_f64_lossy() + g.trace().to_f64_lossy() + h.trace().to_f64_lossy();
    prop_assert!(dist(&f, &f) <= 1e-6 * scale.sqrt());
    let (fg, gf) = (dist(&f, &g), dist(&g, &f));
    prop_assert!((fg - gf).abs() <= 1e-10 * scale, "asymmetry {fg} {gf}");
    let (gh, fh) = (dist(&g, &h), dist(&f, &h));
    prop_assert!(fh <= fg + gh + 1e-10 * scale, "triangle {fh} > {fg} + {gh}");
    Ok(())
}

fn fidelity_both_forms<S: Scalar>(
    seed: u64,
    d: usize,
    ranks: [usize; 3],
) -> Result<(), TestCaseError> {
    let [f, g, _] = triple::<S>(seed, d, ranks);
    let gs = sqrt_psd(&g);
    let inner = project_psd(&hermitian_part(&(gs.matrix() * f.matrix() * gs.matrix()))).unwrap();
    let direct = sqrt_psd(&inner).trace().to_f64_lossy();
    let (fg, gf) = (
        fidelity_trace(&f, &g).unwrap().to_f64_lossy(),
        fidelity_trace(&g, &f).unwrap().to_f64_lossy(),
    );
    let scale = 1.0 + f.trace().to_f64_lossy() + g.trace().to_f64_lossy();
    prop_assert!((fg - gf).abs() <= 1e-9 * scale, "{fg} vs {gf}");
    prop_assert!(
        (fg - direct).abs() <= 1e-6 * scale.sqrt(),
        "{fg} vs {direct}"
    );
    Ok(())
}

fn map_pushes_forward<S: Scalar>(seed: u64, d: usize, rank: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_pd::<S, _>(&mut rng, d);
    let g = random_psd::<S, _>(&mut rng, d, rank);
    let t = transport_map(&f, &g, default_rank_tol()).unwrap();
    prop_assert!(fro(&(&t - t.adjoint())) <= 1e-10 * (1.0 + fro(&t)));
    let pushed = &t * f.matrix() * &t;
    let err = fro(&(pushed - g.matrix()));
    prop_assert!(err <= 1e-8 * (1.0 + fro(g.matrix())), "err {err}");
    Ok(())
}

fn geodesic_has_constant_speed<S: Scalar>(
    seed: u64,
    d: usize,
    rank: usize,
    s: f64,
    t: f64,
) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = random_pd::<S, _>(&mut rng, d);
    let f1 = random_psd::<S, _>(&mut rng, d, rank);
    let total = dist(&f0, &f1);
    let a = geodesic(&f0, &f1, RealOf::<S>::c(s)).unwrap();
    let b = geodesic(&f0, &f1, RealOf::<S>::c(t)).unwrap();
    let got = dist(&a, &b);
    let want = (t - s).abs() * total;
    prop_assert!(
        (got - want).abs() <= 1e-6 * (1.0 + total),
        "{got} vs {want}"
    );
    Ok(())
}

fn exp_inverts_log<S: Scalar>(seed: u64, d: usize, rank: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_pd::<S, _>(&mut rng, d);
    let g = random_psd::<S, _>(&mut rng, d, rank);
    let back = exp_map(&f, &log_map(&f, &g).unwrap()).unwrap();
    let err = fro(&(back.matrix() - g.matrix()));
    prop_assert!(err <= 1e-8 * (1.0 + fro(g.matrix())), "err {err}");
    Ok(())
}

fn log_inverts_exp<S: Scalar>(seed: u64, d: usize, radius: f64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_pd::<S, _>(&mut rng, d);
    let h = random_hermitian::<S, _>(&mut rng, d);
    let op = psd::op_norm(&h).to_f64_lossy().max(1e-300);
    let gamma = TangentVector::new(h * S::from_real(RealOf::<S>::c(radius / op))).unwrap();
    let back = log_map(&f, &exp_map(&f, &gamma).unwrap()).unwrap();
    let err = fro(&(back.matrix() - gamma.matrix()));
    prop_assert!(err <= 1e-7, "err {err}");
    Ok(())
}

fn trace_norm_is_bounded<S: Scalar>(
    seed: u64,
    d: usize,
    ranks: [usize; 3],
) -> Result<(), TestCaseError> {
    let [f, g, _] = triple::<S>(seed, d, ranks);
    let lhs = psd::trace_norm(&(f.matrix() - g.matrix())).to_f64_lossy();
    let rhs = trace_norm_bound(&f, &g).unwrap().to_f64_lossy();
    prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-9, "{lhs} > {rhs}");
    Ok(())
}

fn ranked() -> impl Strategy<Value = (u64, usize, [usize; 3])> {
    (any::<u64>(), 1usize..9)
        .prop_flat_map(|(seed, d)| (Just(seed), Just(d), [1..=d, 1..=d, 1..=d]))
}

fn one_rank() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..9).prop_flat_map(|(seed, d)| (Just(seed), Just(d), 1..=d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distance_is_a_metric_real((seed, d, ranks) in ranked()) {
        metric_axioms::<f64>(seed, d, ranks)?;
    }

    #[test]
    fn distance_is_a_metric_complex((seed, d, ranks) in ranked()) {
        metric_axioms::<Complex64>(seed, d, ranks)?;
    }

    #[test]
    fn fidelity_forms_agree_real((seed, d, ranks) in ranked()) {
        fidelity_both_forms::<f64>(seed, d, ranks)?;
    }

    #[test]
    fn fidelity_forms_agree_complex((seed, d, ranks) in ranked()) {
        fidelity_both_forms::<Complex64>(seed, d, ranks)?;
    }

    #[test]
    fn transport_map_pushes_forward_real((seed, d, rank) in one_rank()) {
        map_pushes_forward::<f64>(seed, d, rank)?;
    }

    #[test]
    fn transport_map_pushes_forward_complex((seed, d, rank) in one_rank()) {
        map_pushes_forward::<Complex64>(seed, d, rank)?;
    }

    #[test]
    fn geodesic_constant_speed_real((seed, d, rank) in one_rank(), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        geodesic_has_constant_speed::<f64>(seed, d, rank, s, t)?;
    }

    #[test]
    fn geodesic_constant_speed_complex((seed, d, rank) in one_rank(), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        geodesic_has_constant_speed::<Complex64>(seed, d, rank, s, t)?;
    }

    #[test]
    fn exp_after_log_real((seed, d, rank) in one_rank()) {
        exp_inverts_log::<f64>(seed, d, rank)?;
    }

    #[test]
    fn exp_after_log_complex((seed, d, rank) in one_rank()) {
        exp_inverts_log::<Complex64>(seed, d, rank)?;
    }

    #[test]
    fn log_after_exp_inside_unit_ball_real(seed in any::<u64>(), d in 1usize..9, radius in 0.0f64..0.95) {
        log_inverts_exp::<f64>(seed, d, radius)?;
    }

    #[test]
    fn log_after_exp_inside_unit_ball_complex(seed in any::<u64>(), d in 1usize..9, radius in 0.0f64..0.95) {
        log_inverts_exp::<Complex64>(seed, d, radius)?;
    }

    #[test]
    fn trace_norm_bound_holds_real((seed, d, ranks) in ranked()) {
        trace_norm_is_bounded::<f64>(seed, d, ranks)?;
    }

    #[test]
    fn trace_norm_bound_holds_complex((seed, d, ranks) in ranked()) {
        trace_norm_is_bounded::<Complex64>(seed, d, ranks)?;
    }
}
