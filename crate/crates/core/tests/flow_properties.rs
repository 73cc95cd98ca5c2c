use bwflow::barycenter::{
    euclidean_mean, fixed_point_residual, frechet_mean_flow, frechet_mean_gd, FlowMeanConfig,
    GdConfig,
};
use bwflow::flow::{distance_matrix, resample, FlowSet, Grid};
use bwflow::pca::tangent_pca;
use bwflow::psd::hermitian_eig;
use bwflow::random::{random_pd, random_psd};
use bwflow::{Complex64, CovMatrix, Real, Scalar};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(seed: u64, m: usize) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    Grid::new(pts).unwrap()
}

fn random_set<S: Scalar<RealField = f64>>(
    seed: u64,
    n: usize,
    d: usize,
    m: usize,
    rank: usize,
) -> FlowSet<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::uniform(m).unwrap();
    let flows = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| random_psd::<S, _>(&mut rng, d, rank))
                .collect()
        })
        .collect();
    FlowSet::from_matrices(grid, flows).unwrap()
}

fn samples<S: Scalar<RealField = f64>>(seed: u64, n: usize, d: usize) -> Vec<CovMatrix<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_pd::<S, _>(&mut rng, d)).collect()
}

fn flow_metric<S: Scalar<RealField = f64>>(
    seed: u64,
    n: usize,
    d: usize,
    m: usize,
    rank: usize,
) -> Result<(), TestCaseError> {
    let set = random_set::<S>(seed, n, d, m, rank);
    let dm = distance_matrix(&set).unwrap();
    let scale = 1.0 + dm.max();
    for i in 0..n {
        prop_assert!(dm[(i, i)].abs() <= 1e-6 * scale);
        for j in 0..n {
            prop_assert!((dm[(i, j)] - dm[(j, i)]).abs() <= 1e-10 * scale);
            for k in 0..n {
                prop_assert!(dm[(i, k)] <= dm[(i, j)] + dm[(j, k)] + 1e-10 * scale);
            }
        }
    }
    Ok(())
}

fn gd_mean_behaves<S: Scalar<RealField = f64>>(
    seed: u64,
    n: usize,
    d: usize,
) -> Result<(), TestCaseError> {
    let xs = samples::<S>(seed, n, d);
    let tol = 1e-10;
    let cfg = GdConfig {
        tol,
        max_iter: 500,
        ..GdConfig::default()
    };
    let res = frechet_mean_gd(&xs, &cfg).unwrap();
    prop_assert!(res.trace.converged);
    for w in res.trace.records.windows(2) {
        prop_assert!(
            w[1].functional <= w[0].functional * (1.0 + 1e-12) + 1e-14,
            "{:?}",
            w
        );
    }
    let residual = fixed_point_residual(&res.mean, &xs).unwrap().to_f64_lossy();
    prop_assert!(residual <= 10.0 * tol, "residual {residual}");
    let gap = euclidean_mean(&xs).unwrap().into_matrix() - res.mean.matrix();
    let low = hermitian_eig(&gap)
        .unwrap()
        .values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    prop_assert!(
        low >= -1e-8,
        "euclidean mean minus barycenter has eigenvalue {low}"
    );
    Ok(())
}

fn pca_scores_decorrelate<S: Scalar<RealField = f64>>(
    seed: u64,
    n: usize,
    d: usize,
    m: usize,
) -> Result<(), TestCaseError> {
    let set = random_set::<S>(seed, n, d, m, d);
    let mean = frechet_mean_flow(&set, &FlowMeanConfig::default())
        .unwrap()
        .mean;
    let model = tangent_pca(&set, mean, n.min(3)).unwrap();
    let k = model.n_components();
    let cov = model.scores.transpose() * &model.scores / n as f64;
    let top = model.eigenvalues[0].max(1e-300);
    for a in 0..k {
        prop_assert!((cov[(a, a)] - model.eigenvalues[a]).abs() <= 1e-8 * top);
        for b in 0..k {
            if a != b {
                prop_assert!(
                    cov[(a, b)].abs() <= 1e-8 * top,
                    "off-diagonal {}",
                    cov[(a, b)]
                );
            }
        }
    }
    let fr = model.variance_fractions();
    prop_assert!(fr.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    prop_assert!(fr.iter().sum::<f64>() <= 1.0 + 1e-10);
    prop_assert!(fr.iter().all(|&x| x >= 0.0));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trapezoid_weights_sum_to_one(seed in any::<u64>(), m in 1usize..40) {
        let w = random_grid(seed, m).quadrature().weights;
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn resample_onto_own_grid_is_identity(seed in any::<u64>(), m in 1usize..8, d in 1usize..5) {
        let set = random_set::<f64>(seed, 1, d, m, d);
        let flow = &set.flows()[0];
        let copy = Grid::new(flow.grid().points().to_vec()).unwrap();
        let again = resample(flow, &copy).unwrap();
        for (a, b) in again.matrices().iter().zip(flow.matrices()) {
            prop_assert_eq!(a.matrix(), b.matrix());
        }
    }

    #[test]
    fn flow_distance_is_a_metric_real(seed in any::<u64>(), n in 2usize..5, d in 1usize..5, m in 1usize..6, r in 1usize..5) {
        flow_metric::<f64>(seed, n, d, m, r.min(d))?;
    }

    #[test]
    fn flow_distance_is_a_metric_complex(seed in any::<u64>(), n in 2usize..5, d in 1usize..5, m in 1usize..6, r in 1usize..5) {
        flow_metric::<Complex64>(seed, n, d, m, r.min(d))?;
    }

    #[test]
    fn gradient_descent_mean_real(seed in any::<u64>(), n in 1usize..8, d in 1usize..6) {
        gd_mean_behaves::<f64>(seed, n, d)?;
    }

    #[test]
    fn gradient_descent_mean_complex(seed in any::<u64>(), n in 1usize..8, d in 1usize..6) {
        gd_mean_behaves::<Complex64>(seed, n, d)?;
    }

    #[test]
    fn pca_scores_are_uncorrelated_real(seed in any::<u64>(), n in 2usize..7, d in 1usize..4, m in 2usize..6) {
        pca_scores_decorrelate::<f64>(seed, n, d, m)?;
    }

    #[test]
    fn pca_scores_are_uncorrelated_complex(seed in any::<u64>(), n in 2usize..7, d in 1usize..4, m in 2usize..6) {
        pca_scores_decorrelate::<Complex64>(seed, n, d, m)?;
    }
}
