//! Lloyd k-means over flow sets, either on raw flows with the integrated
//! Bures-Wasserstein distance or on principal component scores.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{frechet_mean_flow, frechet_mean_flow_from, FlowMeanConfig, MeanAlgorithm};
use crate::error::{BwError, Result};
use crate::flow::{distance_matrix, flow_distance_sq, Flow, FlowSet};
use crate::pca::PcaModel;
use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Squared integrated distance between flows; Fréchet mean flow centroids.
    Raw,
    /// Squared Euclidean distance between score vectors; mean score centroids.
    Scores,
}

#[derive(Debug, Clone)]
pub struct KMeansConfig<S: Scalar> {
    pub mode: ClusterMode,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Barycenter settings for centroid updates.
    pub algorithm: MeanAlgorithm<S>,
}

impl<S: Scalar> KMeansConfig<S> {
    pub fn new(mode: ClusterMode) -> Self {
        KMeansConfig {
            mode,
            restarts: 20,
            max_iter: 100,
            seed: 0,
            algorithm: MeanAlgorithm::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult<S: Scalar> {
    pub labels: Vec<usize>,
    pub centroids: Vec<Flow<S>>,
    /// Sum of squared distances to the own centroid, in the metric of the mode.
    pub inertia: f64,
    /// `inertia / n`.
    pub distortion: f64,
    /// Inertia after each assignment step of the winning restart.
    pub per_iter_inertia: Vec<f64>,
    pub n_iter: usize,
    /// Labels stopped changing before `max_iter`.
    pub converged: bool,
    pub seed: u64,
    /// Restart index that produced the result.
    pub restart: usize,
}

/// Squared-distance geometry the Lloyd loop runs in.
trait Space: Sync {
    type Center: Clone + Send + Sync;

    fn len(&self) -> usize;
    fn point(&self, i: usize) -> Result<Self::Center>;
    fn dist_sq(&self, i: usize, c: &Self::Center) -> Result<f64>;
    /// Barycenter of `members`, starting from `prev`.
    fn update(&self, members: &[usize], prev: &Self::Center) -> Result<Self::Center>;
}

struct RawSpace<'a, S: Scalar> {
    set: &'a FlowSet<S>,
    algorithm: &'a MeanAlgorithm<S>,
}

impl<S: Scalar> Space for RawSpace<'_, S> {
    type Center = Flow<S>;

    fn len(&self) -> usize {
        self.set.len()
    }

    fn point(&self, i: usize) -> Result<Flow<S>> {
        Ok(self.set.flows()[i].clone())
    }

    fn dist_sq(&self, i: usize, c: &Flow<S>) -> Result<f64> {
        Ok(flow_distance_sq(&self.set.flows()[i], c)?.to_f64_lossy())
    }

    fn update(&self, members: &[usize], prev: &Flow<S>) -> Result<Flow<S>> {
        if members.len() == 1 {
            return self.point(members[0]);
        }
        let sub = self.set.subset(members)?;
        Ok(frechet_mean_flow_from(&sub, prev, self.algorithm)?.mean)
    }
}

struct ScoreSpace {
    scores: DMatrix<f64>,
}

impl Space for ScoreSpace {
    type Center = Vec<f64>;

    fn len(&self) -> usize {
        self.scores.nrows()
    }

    fn point(&self, i: usize) -> Result<Vec<f64>> {
        Ok(self.scores.row(i).iter().copied().collect())
    }

    fn dist_sq(&self, i: usize, c: &Vec<f64>) -> Result<f64> {
        Ok(self
            .scores
            .row(i)
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    fn update(&self, members: &[usize], _prev: &Vec<f64>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.scores.ncols()];
        for &i in members {
            for (a, x) in acc.iter_mut().zip(self.scores.row(i).iter()) {
                *a += x;
            }
        }
        let n = members.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

struct LloydRun<C> {
    labels: Vec<usize>,
    centers: Vec<C>,
    per_iter: Vec<f64>,
    converged: bool,
}

/// k-means++ seeding from a matrix of pairwise squared distances.
fn plus_plus_seeds<G: Rng + ?Sized>(d2: &DMatrix<f64>, k: usize, rng: &mut G) -> Vec<usize> {
    let n = d2.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| d2[(i, chosen[0])]).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // every point coincides with a center: take any unused index
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(d2[(i, next)]);
        }
    }
    chosen
}

fn assign<P: Space>(space: &P, centers: &[P::Center]) -> Result<(Vec<usize>, Vec<f64>)> {
    let rows = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = space.dist_sq(i, center)?;
                if d < best.1 {
                    best = (c, d);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().unzip())
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty<P: Space>(
    space: &P,
    labels: &mut [usize],
    dists: &mut [f64],
    centers: &mut [P::Center],
) -> Result<()> {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
            .expect("k <= n leaves a cluster with two members");
        centers[empty] = space.point(far)?;
        labels[far] = empty;
        dists[far] = 0.0;
    }
}

fn lloyd<P: Space>(space: &P, seeds: &[usize], max_iter: usize) -> Result<LloydRun<P::Center>> {
    let k = seeds.len();
    let mut centers: Vec<P::Center> = seeds
        .iter()
        .map(|&i| space.point(i))
        .collect::<Result<_>>()?;
    let mut per_iter = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut converged = false;
    let (mut labels, mut dists) = assign(space, &centers)?;
    for iter in 0..max_iter.max(1) {
        if iter > 0 {
            (labels, dists) = assign(space, &centers)?;
        }
        repair_empty(space, &mut labels, &mut dists, &mut centers)?;
        per_iter.push(dists.iter().sum());
        if prev.as_ref() == Some(&labels) {
            converged = true;
            break;
        }
        let members: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect();
        centers = members
            .par_iter()
            .zip(centers.par_iter())
            .map(|(m, c)| space.update(m, c))
            .collect::<Result<_>>()?;
        prev = Some(labels.clone());
    }
    Ok(LloydRun {
        labels,
        centers,
        per_iter,
        converged,
    })
}

fn best_of_restarts<P: Space>(
    space: &P,
    d2: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<(LloydRun<P::Center>, usize)> {
    let mut best: Option<(LloydRun<P::Center>, usize)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let seeds = plus_plus_seeds(d2, k, &mut rng);
        let run = lloyd(space, &seeds, max_iter)?;
        let better = match &best {
            None => true,
            Some((b, _)) => run.per_iter.last() < b.per_iter.last(),
        };
        if better {
            best = Some((run, r));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Lloyd k-means with k-means++ seeding, best of `cfg.restarts`.
///
/// `Scores` mode requires a model fitted to the same flows and clusters on
/// all of its score columns; centroid flows are then the Fréchet mean flows
/// of the final clusters.
pub fn kmeans_flows<S: Scalar>(
    set: &FlowSet<S>,
    k: usize,
    cfg: &KMeansConfig<S>,
    model: Option<&PcaModel<S>>,
) -> Result<KMeansResult<S>> {
    let n = set.len();
    if k == 0 || k > n {
        return Err(BwError::KOutOfRange { k, available: n });
    }
    let d2 = pairwise_sq(set, cfg.mode, model)?;
    match cfg.mode {
        ClusterMode::Raw => {
            let space = RawSpace {
                set,
                algorithm: &cfg.algorithm,
            };
            let (run, restart) =
                best_of_restarts(&space, &d2, k, cfg.restarts, cfg.max_iter, cfg.seed)?;
            Ok(finish(
                run.labels,
                run.centers,
                run.per_iter,
                run.converged,
                cfg.seed,
                restart,
            ))
        }
        ClusterMode::Scores => {
            let space = ScoreSpace {
                scores: score_matrix(set, model)?,
            };
            let (run, restart) =
                best_of_restarts(&space, &d2, k, cfg.restarts, cfg.max_iter, cfg.seed)?;
            let flow_cfg = FlowMeanConfig {
                algorithm: cfg.algorithm.clone(),
                warm_start: true,
            };
            let centroids = (0..k)
                .map(|c| {
                    let members: Vec<usize> = (0..n).filter(|&i| run.labels[i] == c).collect();
                    Ok(frechet_mean_flow(&set.subset(&members)?, &flow_cfg)?.mean)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(finish(
                run.labels,
                centroids,
                run.per_iter,
                run.converged,
                cfg.seed,
                restart,
            ))
        }
    }
}

fn finish<S: Scalar>(
    labels: Vec<usize>,
    centroids: Vec<Flow<S>>,
    per_iter: Vec<f64>,
    converged: bool,
    seed: u64,
    restart: usize,
) -> KMeansResult<S> {
    let inertia = per_iter.last().copied().unwrap_or(0.0);
    let n = labels.len();
    KMeansResult {
        labels,
        centroids,
        inertia,
        distortion: inertia / n as f64,
        n_iter: per_iter.len(),
        per_iter_inertia: per_iter,
        converged,
        seed,
        restart,
    }
}

fn score_matrix<S: Scalar>(set: &FlowSet<S>, model: Option<&PcaModel<S>>) -> Result<DMatrix<f64>> {
    let model =
        model.ok_or_else(|| BwError::InvalidConfig("score clustering needs a PCA model".into()))?;
    if model.scores.nrows() != set.len() {
        return Err(BwError::DimMismatch {
            left: set.len(),
            right: model.scores.nrows(),
        });
    }
    Ok(model.scores.map(|x| x.to_f64_lossy()))
}

/// Pairwise squared distances in the metric of `mode`.
pub fn pairwise_sq<S: Scalar>(
    set: &FlowSet<S>,
    mode: ClusterMode,
    model: Option<&PcaModel<S>>,
) -> Result<DMatrix<f64>> {
    match mode {
        ClusterMode::Raw => Ok(distance_matrix(set)?.map(|d| {
            let d = d.to_f64_lossy();
            d * d
        })),
        ClusterMode::Scores => {
            let s = score_matrix(set, model)?;
            let n = s.nrows();
            Ok(DMatrix::from_fn(n, n, |i, j| {
                (s.row(i) - s.row(j)).norm_squared()
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElbowRow {
    pub k: usize,
    pub inertia: f64,
    pub distortion: f64,
    /// `I(k-1) - 2 I(k) + I(k+1)` where both neighbours are in the table.
    pub second_difference: Option<f64>,
    /// Inertia did not exceed the previous row's by more than restart noise.
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElbowTable {
    pub rows: Vec<ElbowRow>,
}

impl ElbowTable {
    /// `k` with the largest second difference of inertia.
    pub fn elbow(&self) -> Option<usize> {
        self.rows
            .iter()
            .filter_map(|r| r.second_difference.map(|s| (r.k, s)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "inertia",
            "distortion",
            "second_difference",
            "monotone",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                r.k.to_string(),
                format!("{:e}", r.inertia),
                format!("{:e}", r.distortion),
                r.second_difference
                    .map(|s| format!("{s:e}"))
                    .unwrap_or_default(),
                r.monotone.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One k-means run per `k` in `ks` (ascending, consecutive for the second
/// difference column).
pub fn elbow_scores<S: Scalar>(
    set: &FlowSet<S>,
    ks: &[usize],
    cfg: &KMeansConfig<S>,
    model: Option<&PcaModel<S>>,
) -> Result<ElbowTable> {
    let mut rows: Vec<ElbowRow> = Vec::with_capacity(ks.len());
    for &k in ks {
        let res = kmeans_flows(set, k, cfg, model)?;
        let monotone = rows
            .last()
            .is_none_or(|p| res.inertia <= p.inertia * (1.0 + 1e-9) + 1e-12);
        rows.push(ElbowRow {
            k,
            inertia: res.inertia,
            distortion: res.distortion,
            second_difference: None,
            monotone,
        });
    }
    for i in 1..rows.len().saturating_sub(1) {
        if rows[i - 1].k + 1 == rows[i].k && rows[i].k + 1 == rows[i + 1].k {
            rows[i].second_difference =
                Some(rows[i - 1].inertia - 2.0 * rows[i].inertia + rows[i + 1].inertia);
        }
    }
    Ok(ElbowTable { rows })
}

/// Writes `labels` as `flow,label` rows.
pub fn write_labels_csv<W: Write>(labels: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["flow", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record(&[i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of agreeing labels under the best matching of cluster ids
/// (exhaustive over permutations, so intended for small `k`).
pub fn label_agreement(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "label vectors differ in length");
    if a.is_empty() {
        return 1.0;
    }
    let k = a.iter().chain(b).max().copied().unwrap_or(0) + 1;
    let mut counts = vec![vec![0usize; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        counts[x][y] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|i| counts[i][p[i]]).sum();
        best = best.max(hits);
    });
    best as f64 / a.len() as f64
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

/// Total squared distance from each flow to `center`.
pub fn total_sq_distance<S: Scalar>(set: &FlowSet<S>, center: &Flow<S>) -> Result<f64> {
    set.flows()
        .par_iter()
        .map(|f| Ok(flow_distance_sq(f, center)?.to_f64_lossy()))
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.iter().sum())
}
