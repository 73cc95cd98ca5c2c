//! File formats: the BWF1 binary container, its JSON sidecar, and CSV tables.
//!
//! A BWF1 file holds `n_flows x n_times` square matrices on one grid:
//!
//! ```text
//! magic     8 bytes  "BWFLOW1\0"
//! kind      1 byte   0 = real, 1 = complex
//! reserved  3 bytes  zero
//! n_flows   u32 LE
//! n_times   u32 LE
//! dim       u32 LE
//! grid      n_times f64 LE, strictly increasing in [0, 1]
//! payload   n_flows x n_times x dim x dim f64 LE, row-major,
//!           complex entries as interleaved (re, im)
//! ```
//!
//! The same layout stores flows, spectral flows, tangent fields and PCA
//! components; the sidecar says which.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{BwError, Result};
use crate::flow::{validate_raw, Flow, FlowSet, Grid};
use crate::pca::{PcaModel, TangentField};
use crate::psd::{project_psd, CovMatrix};
use crate::scalar::{Real, RealOf, Scalar, ScalarKind};
use crate::smoothing::ScatterObs;
use crate::spectral::SeriesPanel;

pub const MAGIC: [u8; 8] = *b"BWFLOW1\0";
pub const HEADER_LEN: usize = 24;

/// Structured reasons a BWF1 byte stream is rejected.
#[derive(Debug, Error)]
pub enum Bwf1Error {
    #[error("bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unknown scalar kind byte {0}")]
    UnknownKind(u8),
    #[error("reserved header bytes are not zero: {0:?}")]
    ReservedNonZero([u8; 3]),
    #[error("file has {actual} bytes, header implies {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after the payload")]
    TrailingBytes { extra: usize },
    #[error("header sizes overflow: {n_flows} flows x {n_times} times x dim {dim}")]
    SizeOverflow {
        n_flows: u32,
        n_times: u32,
        dim: u32,
    },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("file holds {found:?} matrices, expected {expected:?}")]
    KindMismatch {
        expected: ScalarKind,
        found: ScalarKind,
    },
    #[error("value {value} at payload offset {offset} is not representable in the target type")]
    Unrepresentable { offset: usize, value: f64 },
    #[error("{count} matrices fail validation:\n{summary}")]
    InvalidFlows { count: usize, summary: String },
    #[error("empty flow set")]
    NoFlows,
}

/// Decoded BWF1 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bwf1Header {
    pub kind: ScalarKind,
    pub n_flows: u32,
    pub n_times: u32,
    pub dim: u32,
}

impl Bwf1Header {
    fn entry_width(&self) -> usize {
        match self.kind {
            ScalarKind::Real => 1,
            ScalarKind::Complex => 2,
        }
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> std::result::Result<usize, Bwf1Error> {
        let overflow = || Bwf1Error::SizeOverflow {
            n_flows: self.n_flows,
            n_times: self.n_times,
            dim: self.dim,
        };
        let d = self.dim as usize;
        let payload = (self.n_flows as usize)
            .checked_mul(self.n_times as usize)
            .and_then(|x| x.checked_mul(d))
            .and_then(|x| x.checked_mul(d))
            .and_then(|x| x.checked_mul(self.entry_width()))
            .ok_or_else(overflow)?;
        payload
            .checked_add(self.n_times as usize)
            .and_then(|x| x.checked_mul(8))
            .and_then(|x| x.checked_add(HEADER_LEN))
            .ok_or_else(overflow)
    }
}

/// Raw contents of a BWF1 file: a grid and `n_flows` rows of matrices,
/// without any PSD check.
#[derive(Debug, Clone, PartialEq)]
pub struct Bwf1Block<S: Scalar> {
    pub grid: Vec<RealOf<S>>,
    pub rows: Vec<Vec<DMatrix<S>>>,
    pub dim: usize,
}

/// Reads and checks the fixed-size header.
pub fn peek_header(bytes: &[u8]) -> std::result::Result<Bwf1Header, Bwf1Error> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() < 8 || bytes[..8] != MAGIC {
            return Err(Bwf1Error::BadMagic {
                found: bytes[..bytes.len().min(8)].to_vec(),
            });
        }
        return Err(Bwf1Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..8] != MAGIC {
        return Err(Bwf1Error::BadMagic {
            found: bytes[..8].to_vec(),
        });
    }
    let kind = ScalarKind::from_code(bytes[8]).ok_or(Bwf1Error::UnknownKind(bytes[8]))?;
    let reserved = [bytes[9], bytes[10], bytes[11]];
    if reserved != [0; 3] {
        return Err(Bwf1Error::ReservedNonZero(reserved));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let header = Bwf1Header {
        kind,
        n_flows: word(12),
        n_times: word(16),
        dim: word(20),
    };
    if header.dim == 0 {
        return Err(Bwf1Error::ZeroDim);
    }
    Ok(header)
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| BwError::Format(format!("{what} = {n} does not fit in 32 bits")))
}

/// Serializes matrices on a grid. Every row must have one `dim x dim` matrix
/// per grid point.
pub fn encode_raw<S: Scalar>(
    grid: &[RealOf<S>],
    rows: &[Vec<DMatrix<S>>],
    dim: usize,
) -> Result<Vec<u8>> {
    Grid::new(grid.to_vec())?;
    if dim == 0 {
        return Err(Bwf1Error::ZeroDim.into());
    }
    let header = Bwf1Header {
        kind: S::KIND,
        n_flows: to_u32(rows.len(), "n_flows")?,
        n_times: to_u32(grid.len(), "n_times")?,
        dim: to_u32(dim, "dim")?,
    };
    let mut out = Vec::with_capacity(header.file_len()?);
    out.extend_from_slice(&MAGIC);
    out.push(S::KIND.code());
    out.extend_from_slice(&[0; 3]);
    for v in [header.n_flows, header.n_times, header.dim] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in grid {
        out.extend_from_slice(&t.to_f64_lossy().to_le_bytes());
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != grid.len() {
            return Err(BwError::InvalidGrid(format!(
                "row {i}: {} matrices for {} grid points",
                row.len(),
                grid.len()
            )));
        }
        for m in row {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(BwError::DimMismatch {
                    left: dim,
                    right: m.nrows().max(m.ncols()),
                });
            }
            for r in 0..dim {
                for c in 0..dim {
                    let (re, im) = m[(r, c)].parts();
                    out.extend_from_slice(&re.to_f64_lossy().to_le_bytes());
                    if S::KIND == ScalarKind::Complex {
                        out.extend_from_slice(&im.to_f64_lossy().to_le_bytes());
                    }
                }
            }
        }
    }
    Ok(out)
}

fn narrow<R: Real>(v: f64, offset: usize) -> std::result::Result<R, Bwf1Error> {
    let r = R::c(v);
    if r.to_f64_lossy().to_bits() == v.to_bits() || (v.is_nan() && r.is_nan()) {
        Ok(r)
    } else {
        Err(Bwf1Error::Unrepresentable { offset, value: v })
    }
}

/// Parses a BWF1 byte stream without checking the matrices. The whole input
/// is validated structurally before anything is returned.
pub fn decode_raw<S: Scalar>(bytes: &[u8]) -> std::result::Result<Bwf1Block<S>, Bwf1Error> {
    let header = peek_header(bytes)?;
    if header.kind != S::KIND {
        return Err(Bwf1Error::KindMismatch {
            expected: S::KIND,
            found: header.kind,
        });
    }
    let expected = header.file_len()?;
    if bytes.len() < expected {
        return Err(Bwf1Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Bwf1Error::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let mut pos = HEADER_LEN;
    let mut next = || {
        let v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        pos += 8;
        (v, pos - 8)
    };
    let n_times = header.n_times as usize;
    let mut grid_f64 = Vec::with_capacity(n_times);
    for _ in 0..n_times {
        grid_f64.push(next().0);
    }
    Grid::new(grid_f64.clone()).map_err(|e| Bwf1Error::BadGrid(e.to_string()))?;
    let grid = grid_f64
        .iter()
        .enumerate()
        .map(|(j, &t)| narrow::<RealOf<S>>(t, HEADER_LEN + 8 * j))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Grid::new(grid.clone()).map_err(|e| Bwf1Error::BadGrid(e.to_string()))?;
    let d = header.dim as usize;
    let mut rows = Vec::with_capacity(header.n_flows as usize);
    for _ in 0..header.n_flows {
        let mut row = Vec::with_capacity(n_times);
        for _ in 0..n_times {
            let mut m = DMatrix::<S>::zeros(d, d);
            for r in 0..d {
                for c in 0..d {
                    let (re, at) = next();
                    let re = narrow::<RealOf<S>>(re, at)?;
                    let im = if S::KIND == ScalarKind::Complex {
                        let (im, at) = next();
                        narrow::<RealOf<S>>(im, at)?
                    } else {
                        RealOf::<S>::c(0.0)
                    };
                    m[(r, c)] =
                        S::from_parts(re, im).expect("imaginary part is zero for real kinds");
                }
            }
            row.push(m);
        }
        rows.push(row);
    }
    Ok(Bwf1Block { grid, rows, dim: d })
}

/// How to treat matrices that fail the PSD checks on load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Replace each matrix by its nearest PSD matrix instead of failing.
    pub force_project: bool,
}

pub fn encode_flowset<S: Scalar>(set: &FlowSet<S>) -> Result<Vec<u8>> {
    let rows: Vec<Vec<DMatrix<S>>> = set
        .flows()
        .iter()
        .map(|f| f.matrices().iter().map(|m| m.matrix().clone()).collect())
        .collect();
    encode_raw(set.grid().points(), &rows, set.dim())
}

pub fn encode_flow<S: Scalar>(flow: &Flow<S>) -> Result<Vec<u8>> {
    encode_flowset(&FlowSet::new(vec![flow.clone()])?)
}

/// Parses and validates a flow set. Matrices are kept bit for bit unless
/// `force_project` is set and some matrix fails validation.
pub fn decode_flowset<S: Scalar>(bytes: &[u8], opts: LoadOptions) -> Result<FlowSet<S>> {
    let block = decode_raw::<S>(bytes)?;
    if block.rows.is_empty() {
        return Err(Bwf1Error::NoFlows.into());
    }
    let diag = validate_raw(&block.grid, &block.rows);
    let project = !diag.is_valid();
    if project && !opts.force_project {
        let count = diag.violations().count() + diag.structural.len();
        return Err(Bwf1Error::InvalidFlows {
            count,
            summary: diag.summary(),
        }
        .into());
    }
    let grid = Grid::new(block.grid)?;
    let flows = block
        .rows
        .into_iter()
        .map(|row| {
            let mats = row
                .into_iter()
                .map(|m| {
                    if project {
                        project_psd(&m)
                    } else {
                        Ok(CovMatrix::new_unchecked(m))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Flow::new(grid.clone(), mats)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowSet::new(flows)
}

pub fn encode_fields<S: Scalar>(
    fields: &[TangentField<S>],
    grid: &Grid<RealOf<S>>,
    dim: usize,
) -> Result<Vec<u8>> {
    if fields.iter().any(|f| !f.grid.same_as(grid)) {
        return Err(BwError::GridMismatch);
    }
    let rows: Vec<Vec<DMatrix<S>>> = fields.iter().map(|f| f.mats.clone()).collect();
    encode_raw(grid.points(), &rows, dim)
}

/// Tangent fields carry no PSD constraint, so no matrix check is applied.
pub fn decode_fields<S: Scalar>(
    bytes: &[u8],
) -> Result<(Grid<RealOf<S>>, Vec<TangentField<S>>, usize)> {
    let block = decode_raw::<S>(bytes)?;
    let grid = Grid::new(block.grid)?;
    let fields = block
        .rows
        .into_iter()
        .map(|mats| TangentField {
            grid: grid.clone(),
            mats,
        })
        .collect();
    Ok((grid, fields, block.dim))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_flowset<S: Scalar>(path: &Path, set: &FlowSet<S>) -> Result<()> {
    write_bytes(path, &encode_flowset(set)?)
}

pub fn read_flowset<S: Scalar>(path: &Path, opts: LoadOptions) -> Result<FlowSet<S>> {
    decode_flowset(&fs::read(path)?, opts)
}

/// What a BWF1 file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Flows,
    Mean,
    SpectralFlows,
    TangentFields,
    PcaComponents,
    ModesOfVariation,
    Smoothed,
    Centroids,
}

/// JSON description written next to a BWF1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub content: ContentKind,
    pub scalar_kind: String,
    pub n_flows: u32,
    pub n_times: u32,
    pub dim: u32,
    #[serde(default)]
    pub annotations: BTreeMap<String, serde_json::Value>,
}

impl Sidecar {
    pub fn new(content: ContentKind, header: Bwf1Header) -> Self {
        let scalar_kind = match header.kind {
            ScalarKind::Real => "real",
            ScalarKind::Complex => "complex",
        };
        Sidecar {
            format: "BWF1".into(),
            content,
            scalar_kind: scalar_kind.into(),
            n_flows: header.n_flows,
            n_times: header.n_times,
            dim: header.dim,
            annotations: BTreeMap::new(),
        }
    }

    pub fn annotate(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.annotations
            .insert(key.into(), serde_json::to_value(value)?);
        Ok(self)
    }
}

/// `out.bwf` gets the sidecar `out.bwf.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the BWF1 bytes and the matching sidecar.
pub fn write_with_sidecar(
    path: &Path,
    bytes: &[u8],
    content: ContentKind,
    annotations: &[(&str, serde_json::Value)],
) -> Result<()> {
    let header = peek_header(bytes)?;
    let mut side = Sidecar::new(content, header);
    for (k, v) in annotations {
        side.annotations.insert((*k).into(), v.clone());
    }
    write_bytes(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&fs::read(sidecar_path(path))?)?)
}

/// JSON half of a saved PCA model; components and mean live in BWF1 files
/// named in the manifest, relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaManifest {
    pub n_flows: usize,
    pub dim: usize,
    pub grid: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub variance_fractions: Vec<f64>,
    pub total_variance: f64,
    pub centering_residual: f64,
    pub scores: Vec<Vec<f64>>,
    pub components_file: String,
    pub mean_file: String,
}

/// Writes `<stem>.json`, `<stem>.components.bwf` and `<stem>.mean.bwf`.
pub fn write_pca_model<S: Scalar>(
    dir: &Path,
    stem: &str,
    model: &PcaModel<S>,
) -> Result<PcaManifest> {
    let components_file = format!("{stem}.components.bwf");
    let mean_file = format!("{stem}.mean.bwf");
    let k = model.n_components();
    let f = |v: &[RealOf<S>]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let eigenvalues = f(&model.eigenvalues);
    let manifest = PcaManifest {
        n_flows: model.scores.nrows(),
        dim: model.mean.dim(),
        grid: f(model.grid().points()),
        eigenvalues: eigenvalues.clone(),
        variance_fractions: f(&model.variance_fractions()),
        total_variance: model.total_variance.to_f64_lossy(),
        centering_residual: model.centering_residual.to_f64_lossy(),
        scores: (0..model.scores.nrows())
            .map(|i| {
                (0..k)
                    .map(|c| model.scores[(i, c)].to_f64_lossy())
                    .collect()
            })
            .collect(),
        components_file: components_file.clone(),
        mean_file: mean_file.clone(),
    };
    let comp = encode_fields(&model.components, model.grid(), model.mean.dim())?;
    write_with_sidecar(
        &dir.join(&components_file),
        &comp,
        ContentKind::PcaComponents,
        &[("eigenvalues", serde_json::to_value(&eigenvalues[..k])?)],
    )?;
    write_with_sidecar(
        &dir.join(&mean_file),
        &encode_flow(&model.mean)?,
        ContentKind::Mean,
        &[],
    )?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Reads a real model written by [`write_pca_model`].
pub fn read_pca_model(manifest_path: &Path) -> Result<PcaModel<f64>> {
    let manifest: PcaManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mean_set: FlowSet<f64> =
        read_flowset(&dir.join(&manifest.mean_file), LoadOptions::default())?;
    let mean = mean_set.into_flows().remove(0);
    let (grid, components, _) =
        decode_fields::<f64>(&fs::read(dir.join(&manifest.components_file))?)?;
    if !grid.same_as(mean.grid()) {
        return Err(BwError::GridMismatch);
    }
    let components = components
        .into_iter()
        .map(|f| TangentField {
            grid: mean.grid().clone(),
            mats: f.mats,
        })
        .collect::<Vec<_>>();
    let k = components.len();
    let n = manifest.scores.len();
    if manifest.scores.iter().any(|r| r.len() != k) {
        return Err(BwError::Format(format!("score rows must have {k} entries")));
    }
    let scores = DMatrix::from_fn(n, k, |i, c| manifest.scores[i][c]);
    Ok(PcaModel {
        mean,
        eigenvalues: manifest.eigenvalues,
        components,
        scores,
        total_variance: manifest.total_variance,
        centering_residual: manifest.centering_residual,
    })
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, line: u64) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| {
        BwError::Format(format!(
            "line {line}, column {}: cannot parse {raw:?}",
            col + 1
        ))
    })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Reads scattered observations: `flow_id, time, m_11, m_12, ..., m_dd`
/// with the matrix row-major. Each matrix is validated.
pub fn read_scatter_csv<R: Read>(r: R) -> Result<ScatterObs<f64>> {
    let mut rdr = csv_reader(r);
    let ncols = rdr.headers()?.len();
    let entries = ncols.checked_sub(2).filter(|&e| e > 0).ok_or_else(|| {
        BwError::Format(format!(
            "observation table needs flow_id, time and matrix entries, got {ncols} columns"
        ))
    })?;
    let d = (entries as f64).sqrt().round() as usize;
    if d * d != entries {
        return Err(BwError::Format(format!(
            "{entries} matrix columns is not a square count"
        )));
    }
    let (mut times, mut mats, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        ids.push(parse_field::<usize>(&rec, 0, line)?);
        times.push(parse_field::<f64>(&rec, 1, line)?);
        let vals = (0..entries)
            .map(|c| parse_field::<f64>(&rec, c + 2, line))
            .collect::<Result<Vec<_>>>()?;
        let m = DMatrix::from_row_slice(d, d, &vals);
        mats.push(CovMatrix::new(m).map_err(|e| BwError::Format(format!("line {line}: {e}")))?);
    }
    ScatterObs::new(times, mats, ids)
}

pub fn write_scatter_csv<W: Write>(obs: &ScatterObs<f64>, out: W) -> Result<()> {
    let d = obs.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["flow_id".to_string(), "time".to_string()];
    for r in 1..=d {
        for c in 1..=d {
            header.push(format!("m_{r}_{c}"));
        }
    }
    w.write_record(&header)?;
    for ((id, t), m) in obs.flow_ids.iter().zip(&obs.times).zip(&obs.mats) {
        let mut row = vec![id.to_string(), t.to_string()];
        for r in 0..d {
            for c in 0..d {
                row.push(m.matrix()[(r, c)].to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a mask listing observed cells as `flow, time_index` rows and keeps
/// those grid points of `set` as scattered observations.
pub fn read_mask_csv<R: Read>(r: R) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        out.push((parse_field(&rec, 0, line)?, parse_field(&rec, 1, line)?));
    }
    Ok(out)
}

pub fn masked_observations<S: Scalar>(
    set: &FlowSet<S>,
    mask: &[(usize, usize)],
) -> Result<ScatterObs<S>> {
    let (mut times, mut mats, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j) in mask {
        if i >= set.len() || j >= set.grid().len() {
            return Err(BwError::Format(format!(
                "mask cell ({i}, {j}) outside {} flows x {} times",
                set.len(),
                set.grid().len()
            )));
        }
        times.push(set.grid().points()[j]);
        mats.push(set.flows()[i].at(j).clone());
        ids.push(i);
    }
    ScatterObs::new(times, mats, ids)
}

/// Multivariate series grouped by id, rows sorted by time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub ids: Vec<u64>,
    pub series: Vec<DMatrix<f64>>,
}

impl SeriesTable {
    pub fn dim(&self) -> usize {
        self.series.first().map_or(0, |s| s.ncols())
    }

    pub fn panels(&self) -> Result<Vec<SeriesPanel>> {
        self.series
            .iter()
            .enumerate()
            .map(|(i, s)| SeriesPanel::new(i, s.clone()))
            .collect()
    }
}

/// Reads `id, time_index, x_1, ..., x_d` rows. Series appear in order of
/// first occurrence; each must have consecutive time indices with no gaps
/// or repeats once sorted.
pub fn read_series_csv<R: Read>(r: R) -> Result<SeriesTable> {
    let mut rdr = csv_reader(r);
    let ncols = rdr.headers()?.len();
    let d = ncols.checked_sub(2).filter(|&d| d > 0).ok_or_else(|| {
        BwError::Format(format!(
            "series table needs id, time_index and values, got {ncols} columns"
        ))
    })?;
    let mut order: Vec<u64> = Vec::new();
    let mut rows: BTreeMap<u64, Vec<(i64, Vec<f64>)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let id: u64 = parse_field(&rec, 0, line)?;
        let t: i64 = parse_field(&rec, 1, line)?;
        let x = (0..d)
            .map(|c| parse_field::<f64>(&rec, c + 2, line))
            .collect::<Result<Vec<_>>>()?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(BwError::Format(format!("line {line}: non-finite value")));
        }
        let entry = rows.entry(id).or_default();
        if entry.is_empty() {
            order.push(id);
        }
        entry.push((t, x));
    }
    if order.is_empty() {
        return Err(BwError::Empty("series table"));
    }
    let mut series = Vec::with_capacity(order.len());
    for id in &order {
        let mut r = rows.remove(id).unwrap();
        r.sort_by_key(|(t, _)| *t);
        if let Some(w) = r.windows(2).find(|w| w[1].0 != w[0].0 + 1) {
            return Err(BwError::Format(format!(
                "series {id}: time indices {} and {} are not consecutive",
                w[0].0, w[1].0
            )));
        }
        series.push(DMatrix::from_fn(r.len(), d, |i, c| r[i].1[c]));
    }
    Ok(SeriesTable { ids: order, series })
}

/// Writes a dense real matrix with a leading row-label column.
pub fn write_matrix_csv<W: Write>(
    m: &DMatrix<f64>,
    row_label: &str,
    col_prefix: &str,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![row_label.to_string()];
    header.extend((0..m.ncols()).map(|c| format!("{col_prefix}{c}")));
    w.write_record(&header)?;
    for r in 0..m.nrows() {
        let mut row = vec![r.to_string()];
        row.extend((0..m.ncols()).map(|c| m[(r, c)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores as `flow, pc1, pc2, ...`.
pub fn write_scores_csv<W: Write>(scores: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["flow".to_string()];
    header.extend((1..=scores.ncols()).map(|c| format!("pc{c}")));
    w.write_record(&header)?;
    for r in 0..scores.nrows() {
        let mut row = vec![r.to_string()];
        row.extend((0..scores.ncols()).map(|c| scores[(r, c)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score table written by [`write_scores_csv`].
pub fn read_scores_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv_reader(r);
    let k = rdr.headers()?.len().saturating_sub(1);
    let mut vals = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        for c in 0..k {
            vals.push(parse_field::<f64>(&rec, c + 1, line)?);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, k, &vals))
}

/// `component, eigenvalue, variance_fraction, cumulative` for every
/// eigenvalue of the model.
pub fn write_variance_csv<S: Scalar, W: Write>(model: &PcaModel<S>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "eigenvalue", "variance_fraction", "cumulative"])?;
    let mut cum = 0.0;
    for (k, f) in model.variance_fractions().iter().enumerate() {
        let f = f.to_f64_lossy();
        cum += f;
        w.write_record([
            (k + 1).to_string(),
            model.eigenvalues[k].to_string(),
            f.to_string(),
            cum.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_pd, random_psd};
    use crate::testutil::seeded;
    use num_complex::Complex64;

    fn sample_set<S: Scalar>(n: usize, m: usize, d: usize, seed: u64) -> FlowSet<S> {
        let mut g = seeded(seed);
        let grid = Grid::uniform(m).unwrap();
        let flows = (0..n)
            .map(|_| {
                (0..m)
                    .map(|j| random_psd::<S, _>(&mut g, d, 1 + j % d))
                    .collect()
            })
            .collect();
        FlowSet::from_matrices(grid, flows).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let real = sample_set::<f64>(3, 5, 3, 1);
        let bytes = encode_flowset(&real).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 5 + 8 * 3 * 5 * 9);
        let back: FlowSet<f64> = decode_flowset(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(back, real);
        assert_eq!(encode_flowset(&back).unwrap(), bytes);

        let cplx = sample_set::<Complex64>(2, 4, 2, 2);
        let bytes = encode_flowset(&cplx).unwrap();
        assert_eq!(bytes[8], 1);
        let back: FlowSet<Complex64> = decode_flowset(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(encode_flowset(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let set = sample_set::<f64>(2, 3, 2, 3);
        let bytes = encode_flowset(&set).unwrap();
        assert_eq!(&bytes[..8], b"BWFLOW1\0");
        assert_eq!(&bytes[8..12], &[0, 0, 0, 0]);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0.5);
        let first = f64::from_le_bytes(bytes[48..56].try_into().unwrap());
        assert_eq!(first, set.flows()[0].at(0).matrix()[(0, 0)]);
        let second = f64::from_le_bytes(bytes[56..64].try_into().unwrap());
        assert_eq!(second, set.flows()[0].at(0).matrix()[(0, 1)]);
    }

    fn reject(bytes: &[u8]) -> Bwf1Error {
        decode_raw::<f64>(bytes).expect_err("corrupt input must be rejected")
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let good = encode_flowset(&sample_set::<f64>(2, 3, 2, 4)).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(reject(&bad), Bwf1Error::BadMagic { .. }));
        assert!(matches!(reject(&good[..5]), Bwf1Error::BadMagic { .. }));
        assert!(matches!(reject(&good[..20]), Bwf1Error::Truncated { .. }));

        let mut bad = good.clone();
        bad[8] = 7;
        assert!(matches!(reject(&bad), Bwf1Error::UnknownKind(7)));

        let mut bad = good.clone();
        bad[10] = 1;
        assert!(matches!(reject(&bad), Bwf1Error::ReservedNonZero(_)));

        assert!(matches!(
            reject(&good[..good.len() - 1]),
            Bwf1Error::Truncated { .. }
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            reject(&long),
            Bwf1Error::TrailingBytes { extra: 1 }
        ));

        let mut bad = good.clone();
        bad[24..32].copy_from_slice(&0.75f64.to_le_bytes());
        assert!(matches!(reject(&bad), Bwf1Error::BadGrid(_)));

        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            reject(&bad),
            Bwf1Error::SizeOverflow { .. } | Bwf1Error::Truncated { .. }
        ));

        let mut bad = good.clone();
        bad[20..24].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(reject(&bad), Bwf1Error::ZeroDim));

        assert!(matches!(
            decode_raw::<Complex64>(&good).unwrap_err(),
            Bwf1Error::KindMismatch {
                expected: ScalarKind::Complex,
                found: ScalarKind::Real
            }
        ));
    }

    #[test]
    fn invalid_matrices_fail_unless_projected() {
        let set = sample_set::<f64>(2, 3, 2, 5);
        let mut bytes = encode_flowset(&set).unwrap();
        // flow 1, time 2, entry (0, 0)
        let at = HEADER_LEN + 8 * 3 + 8 * (3 * 4 + 2 * 4);
        bytes[at..at + 8].copy_from_slice(&(-5.0f64).to_le_bytes());
        let err = decode_flowset::<f64>(&bytes, LoadOptions::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("flow 1 time 2"), "{err}");
        let fixed = decode_flowset::<f64>(
            &bytes,
            LoadOptions {
                force_project: true,
            },
        )
        .unwrap();
        assert!(fixed.flows()[1].at(2).min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn f32_roundtrip_and_unrepresentable_values() {
        let set = sample_set::<f32>(1, 3, 2, 6);
        let bytes = encode_flowset(&set).unwrap();
        let back: FlowSet<f32> = decode_flowset(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(back, set);
        let wide = encode_flowset(&sample_set::<f64>(1, 3, 2, 7)).unwrap();
        assert!(matches!(
            decode_raw::<f32>(&wide).unwrap_err(),
            Bwf1Error::Unrepresentable { .. }
        ));
    }

    #[test]
    fn fields_roundtrip_without_psd_check() {
        let grid = Grid::<f64>::uniform(3).unwrap();
        let f = TangentField {
            grid: grid.clone(),
            mats: vec![DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -2.0]); 3],
        };
        let bytes = encode_fields(std::slice::from_ref(&f), &grid, 2).unwrap();
        let (g, back, d) = decode_fields::<f64>(&bytes).unwrap();
        assert_eq!(d, 2);
        assert!(g.same_as(&grid));
        assert_eq!(back[0].mats, f.mats);
        assert!(decode_flowset::<f64>(&bytes, LoadOptions::default()).is_err());
        let empty = encode_fields::<f64>(&[], &grid, 2).unwrap();
        assert!(decode_fields::<f64>(&empty).unwrap().1.is_empty());
    }

    #[test]
    fn sidecar_and_pca_model_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = seeded(8);
        let flows = (0..4)
            .map(|_| (0..3).map(|_| random_pd::<f64, _>(&mut g, 2)).collect())
            .collect();
        let set = FlowSet::from_matrices(Grid::uniform(3).unwrap(), flows).unwrap();
        let mean = crate::barycenter::frechet_mean_flow(&set, &Default::default())
            .unwrap()
            .mean;
        let model = crate::pca::tangent_pca(&set, mean, 3).unwrap();
        write_pca_model(dir.path(), "model", &model).unwrap();
        let side = read_sidecar(&dir.path().join("model.components.bwf")).unwrap();
        assert_eq!(side.content, ContentKind::PcaComponents);
        assert_eq!(side.n_flows as usize, model.n_components());
        let back = read_pca_model(&dir.path().join("model.json")).unwrap();
        assert_eq!(back.eigenvalues, model.eigenvalues);
        assert_eq!(back.scores, model.scores);
        assert_eq!(back.components, model.components);
        assert_eq!(back.mean, model.mean);
    }

    #[test]
    fn scatter_csv_roundtrip() {
        let set = sample_set::<f64>(2, 3, 2, 9);
        let obs = masked_observations(&set, &[(0, 0), (1, 2), (0, 1)]).unwrap();
        let mut buf = Vec::new();
        write_scatter_csv(&obs, &mut buf).unwrap();
        let back = read_scatter_csv(&buf[..]).unwrap();
        assert_eq!(back.flow_ids, vec![0, 1, 0]);
        assert_eq!(back.times, obs.times);
        for (a, b) in back.mats.iter().zip(&obs.mats) {
            assert_eq!(a, b);
        }
        let bad = "flow_id,time,a,b,c\n0,0.5,1,2,3\n";
        assert!(read_scatter_csv(bad.as_bytes()).is_err());
        let not_psd = "flow_id,time,a\n0,0.5,-1\n";
        assert!(read_scatter_csv(not_psd.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        assert!(masked_observations(&set, &[(2, 0)]).is_err());
        let mask = read_mask_csv("flow,time_index\n1,2\n0,0\n".as_bytes()).unwrap();
        assert_eq!(mask, vec![(1, 2), (0, 0)]);
    }

    #[test]
    fn series_csv_groups_and_sorts() {
        let text = "series_id,time_index,x_1,x_2\n7,1,3,4\n7,0,1,2\n2,0,5,6\n2,1,7,8\n7,2,9,10\n";
        let t = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(t.ids, vec![7, 2]);
        assert_eq!(
            t.series[0],
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 9.0, 10.0])
        );
        assert_eq!(t.series[1].nrows(), 2);
        assert_eq!(t.dim(), 2);
        let gap = "id,t,x\n0,0,1\n0,2,1\n";
        assert!(read_series_csv(gap.as_bytes()).is_err());
        let dup = "id,t,x\n0,0,1\n0,0,1\n";
        assert!(read_series_csv(dup.as_bytes()).is_err());
    }

    #[test]
    fn score_table_roundtrip() {
        let s = DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 1e-17, 3.5]);
        let mut buf = Vec::new();
        write_scores_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("flow,pc1,pc2\n"));
        assert_eq!(read_scores_csv(&buf[..]).unwrap(), s);
    }
}
