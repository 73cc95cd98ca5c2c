use bwflow::cluster::{kmeans_flows, label_agreement, pairwise_sq, ClusterMode, KMeansConfig};
use bwflow::flow::{FlowSet, Grid};
use bwflow::random::random_pd;
use bwflow::simgen::{sample_flows, PerturbationLaw, SimConfig, Template};
use bwflow::CovMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(seed: u64, d: usize, m: usize, n: usize, nu: f64, matern: bool) -> SimConfig {
    let mut cfg = SimConfig::new(d, m, n, nu, seed);
    cfg.truncation = 4;
    if matern {
        cfg.template = Template::MaternPair {
            nu1: 0.5,
            nu2: 2.5,
            length_scale: 1.0,
            variance: 1.0,
        };
    }
    cfg
}

fn two_groups(seed: u64, per: usize, d: usize, m: usize) -> FlowSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::uniform(m).unwrap();
    let flows = (0..2 * per)
        .map(|i| {
            let shift = if i < per { 0.0 } else { 20.0 };
            (0..m)
                .map(|_| {
                    let base = random_pd::<f64, _>(&mut rng, d).into_matrix();
                    CovMatrix::new(base + nalgebra::DMatrix::identity(d, d) * shift).unwrap()
                })
                .collect()
        })
        .collect();
    FlowSet::from_matrices(grid, flows).unwrap()
}

fn random_flows(seed: u64, n: usize, d: usize, m: usize) -> FlowSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::uniform(m).unwrap();
    FlowSet::from_matrices(
        grid,
        (0..n)
            .map(|_| (0..m).map(|_| random_pd(&mut rng, d)).collect())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generator_is_deterministic_and_psd(seed in any::<u64>(), d in 2usize..6, m in 2usize..8, n in 1usize..5, nu in 2.0f64..40.0, matern in any::<bool>()) {
        let cfg = config(seed, d, m, n, nu, matern);
        let law = PerturbationLaw::default();
        let a = sample_flows(&cfg, &law).unwrap();
        let b = sample_flows(&cfg, &law).unwrap();
        for (fa, fb) in a.flows().iter().zip(b.flows()) {
            for (x, y) in fa.matrices().iter().zip(fb.matrices()) {
                prop_assert_eq!(x.matrix(), y.matrix());
                prop_assert!(x.min_eigenvalue() >= -1e-12 * (1.0 + x.trace()));
            }
        }
        let other = sample_flows(&config(seed.wrapping_add(1), d, m, n, nu, matern), &law).unwrap();
        let differs = other.flows().iter().zip(a.flows())
            .any(|(x, y)| x.matrices().iter().zip(y.matrices()).any(|(p, q)| p.matrix() != q.matrix()));
        prop_assert!(differs);
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in any::<u64>(), n in 3usize..9, d in 1usize..4, m in 2usize..5, k in 1usize..4) {
        let set = random_flows(seed, n, d, m);
        let cfg = KMeansConfig { restarts: 2, seed, ..KMeansConfig::new(ClusterMode::Raw) };
        let res = kmeans_flows(&set, k.min(n), &cfg, None).unwrap();
        for w in res.per_iter_inertia.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-6) + 1e-12, "{:?}", res.per_iter_inertia);
        }
    }

    #[test]
    fn clustering_ignores_flow_order(seed in any::<u64>(), per in 2usize..6, d in 1usize..4, m in 2usize..5) {
        let set = two_groups(seed, per, d, m);
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let shuffled = set.subset(&order).unwrap();

        let d2 = pairwise_sq(&set, ClusterMode::Raw, None).unwrap();
        let e2 = pairwise_sq(&shuffled, ClusterMode::Raw, None).unwrap();
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                prop_assert!((e2[(a, b)] - d2[(i, j)]).abs() <= 1e-9 * (1.0 + d2[(i, j)]));
            }
        }

        let cfg = KMeansConfig { restarts: 4, seed, ..KMeansConfig::new(ClusterMode::Raw) };
        let base = kmeans_flows(&set, 2, &cfg, None).unwrap().labels;
        let moved = kmeans_flows(&shuffled, 2, &cfg, None).unwrap().labels;
        let mut back = vec![0; set.len()];
        for (a, &i) in order.iter().enumerate() {
            back[i] = moved[a];
        }
        prop_assert_eq!(label_agreement(&base, &back), 1.0);
        let truth: Vec<usize> = (0..set.len()).map(|i| usize::from(i >= per)).collect();
        prop_assert_eq!(label_agreement(&base, &truth), 1.0);
    }
}
