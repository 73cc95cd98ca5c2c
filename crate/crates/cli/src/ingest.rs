//! Sliding-window covariance flows from raw multivariate recordings.
//!
//! The flow at window centre `c` is
//! `(1/L) sum_{j in W_c} (X_j - Xbar_c)(X_j - Xbar_c)^T` over
//! `W_c = [c - h, c + h]` clipped to the series, with `L = |W_c|` and
//! `Xbar_c` the window mean. Centres are `0, stride, 2 stride, ...` and sit
//! at grid time `c / (T - 1)`.

use std::collections::BTreeMap;
use std::io::Read;

use bwflow::barycenter::{frechet_mean_flow, FlowMeanConfig};
use bwflow::flow::{Flow, FlowSet, Grid};
use bwflow::{BwError, CovMatrix, Result};
use nalgebra::DMatrix;
use serde::Serialize;

/// How repeated runs of one subject are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RunAveraging {
    /// Entrywise average of the run flows.
    Euclidean,
    /// Fréchet mean flow of the run flows.
    Frechet,
}

pub const TRUNCATION_NOTE: &str =
    "windows are clipped at the series ends and normalized by the number of samples they contain";

/// Recordings grouped by subject, each subject with one or more runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Recordings {
    pub subjects: Vec<u64>,
    pub runs: Vec<Vec<DMatrix<f64>>>,
}

/// Reads `subject_id, time_index, x_1, ..., x_d`, or with a second column
/// named `run_id`, `subject_id, run_id, time_index, x_1, ..., x_d`.
pub fn read_recordings<R: Read>(r: R) -> Result<Recordings> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers()?.clone();
    let has_run = header
        .get(1)
        .is_some_and(|h| h.eq_ignore_ascii_case("run_id"));
    let keys = if has_run { 3 } else { 2 };
    let d = header
        .len()
        .checked_sub(keys)
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            BwError::Format(format!(
                "recording table has {} columns, no values",
                header.len()
            ))
        })?;

    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut rows: BTreeMap<(u64, u64), Vec<(i64, Vec<f64>)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize| -> Result<&str> { Ok(rec.get(c).unwrap_or("")) };
        let bad = |c: usize, raw: &str| {
            BwError::Format(format!(
                "line {line}, column {}: cannot parse {raw:?}",
                c + 1
            ))
        };
        let subject: u64 = field(0)?.parse().map_err(|_| bad(0, field(0).unwrap()))?;
        let run: u64 = if has_run {
            field(1)?.parse().map_err(|_| bad(1, field(1).unwrap()))?
        } else {
            0
        };
        let tcol = keys - 1;
        let t: i64 = field(tcol)?
            .parse()
            .map_err(|_| bad(tcol, field(tcol).unwrap()))?;
        let mut x = Vec::with_capacity(d);
        for c in keys..keys + d {
            let v: f64 = field(c)?.parse().map_err(|_| bad(c, field(c).unwrap()))?;
            if !v.is_finite() {
                return Err(BwError::Format(format!("line {line}: non-finite value")));
            }
            x.push(v);
        }
        let entry = rows.entry((subject, run)).or_default();
        if entry.is_empty() {
            order.push((subject, run));
        }
        entry.push((t, x));
    }
    if order.is_empty() {
        return Err(BwError::Empty("recordings"));
    }
    let mut subjects: Vec<u64> = Vec::new();
    let mut runs: Vec<Vec<DMatrix<f64>>> = Vec::new();
    for key in order {
        let mut r = rows.remove(&key).unwrap();
        r.sort_by_key(|(t, _)| *t);
        if let Some(w) = r.windows(2).find(|w| w[1].0 != w[0].0 + 1) {
            return Err(BwError::Format(format!(
                "subject {} run {}: time indices {} and {} are not consecutive",
                key.0, key.1, w[0].0, w[1].0
            )));
        }
        let series = DMatrix::from_fn(r.len(), d, |i, c| r[i].1[c]);
        match subjects.iter().position(|&s| s == key.0) {
            Some(i) => runs[i].push(series),
            None => {
                subjects.push(key.0);
                runs.push(vec![series]);
            }
        }
    }
    Ok(Recordings { subjects, runs })
}

/// Window centres and their grid times for a series of length `len`.
pub fn window_grid(len: usize, h: usize, stride: usize) -> Result<(Vec<usize>, Grid<f64>)> {
    if stride == 0 {
        return Err(BwError::InvalidConfig("stride must be at least 1".into()));
    }
    if 2 * h + 1 > len {
        return Err(BwError::WindowTooLarge {
            window: 2 * h + 1,
            len,
        });
    }
    let centres: Vec<usize> = (0..len).step_by(stride).collect();
    let times = if len == 1 {
        vec![0.0]
    } else {
        centres
            .iter()
            .map(|&c| c as f64 / (len - 1) as f64)
            .collect()
    };
    Ok((centres, Grid::new(times)?))
}

/// Sliding-window covariance flow of one series (rows are times).
pub fn sliding_flow(x: &DMatrix<f64>, h: usize, stride: usize) -> Result<Flow<f64>> {
    let len = x.nrows();
    let (centres, grid) = window_grid(len, h, stride)?;
    let mats = centres
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(h);
            let hi = (c + h).min(len - 1);
            let w = x.rows(lo, hi - lo + 1);
            let n = w.nrows() as f64;
            let mean = w.row_mean();
            let centred = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] - mean[j]);
            let cov = centred.transpose() * &centred / n;
            CovMatrix::new((&cov + cov.transpose()) * 0.5)
        })
        .collect::<Result<Vec<_>>>()?;
    Flow::new(grid, mats)
}

/// One flow per subject; runs of a subject are averaged.
pub fn sliding_flowset(
    rec: &Recordings,
    h: usize,
    stride: usize,
    averaging: RunAveraging,
) -> Result<FlowSet<f64>> {
    let len = rec.runs[0][0].nrows();
    if let Some(s) = rec.runs.iter().flatten().find(|s| s.nrows() != len) {
        return Err(BwError::RaggedSeries(len, s.nrows()));
    }
    let flows = rec
        .runs
        .iter()
        .map(|runs| {
            let run_flows = runs
                .iter()
                .map(|x| sliding_flow(x, h, stride))
                .collect::<Result<Vec<_>>>()?;
            combine_runs(run_flows, averaging)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowSet::new(flows)
}

fn combine_runs(mut flows: Vec<Flow<f64>>, averaging: RunAveraging) -> Result<Flow<f64>> {
    if flows.len() == 1 {
        return Ok(flows.pop().unwrap());
    }
    let set = FlowSet::new(flows)?;
    match averaging {
        RunAveraging::Euclidean => {
            let n = set.len() as f64;
            let mats = (0..set.grid().len())
                .map(|j| {
                    let sum = set
                        .flows()
                        .iter()
                        .fold(DMatrix::zeros(set.dim(), set.dim()), |acc, f| {
                            acc + f.at(j).matrix()
                        });
                    CovMatrix::new_unchecked(sum / n)
                })
                .collect();
            Flow::new(set.grid().clone(), mats)
        }
        RunAveraging::Frechet => Ok(frechet_mean_flow(&set, &FlowMeanConfig::default())?.mean),
    }
}
