//! Subcommands. Each returns an [`Outcome`] listing what it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use bwflow::barycenter::{
    frechet_mean_flow, FlowMeanConfig, GdConfig, MeanAlgorithm, Sampling, SgdConfig,
};
use bwflow::cluster::{elbow_scores, kmeans_flows, write_labels_csv, ClusterMode, KMeansConfig};
use bwflow::flow::{distance_matrix, Flow, FlowSet, Grid};
use bwflow::io::{
    self, encode_flow, encode_flowset, peek_header, read_mask_csv, read_scatter_csv,
    read_series_csv, write_matrix_csv, write_pca_model, write_scores_csv, write_variance_csv,
    write_with_sidecar, ContentKind, LoadOptions,
};
use bwflow::pca::{mode_of_variation, tangent_pca, PcaModel};
use bwflow::simgen::{bimodal_dataset, sample_flows, PerturbationLaw, SimConfig};
use bwflow::smoothing::{
    best_bandwidth, lfr_estimate, mean_bandwidth_sweep, nw_smooth, write_sweep_csv, Kernel,
    KernelKind, MeanEstimator, ScatterObs,
};
use bwflow::spectral::{spectral_density_flow, LagWindow, Preprocess};
use bwflow::{BwError, Complex64, Real, RealOf, Scalar, ScalarKind};
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ingest::{read_recordings, sliding_flowset, RunAveraging, TRUNCATION_NOTE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Bw(#[from] BwError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What a command did, for the run manifest.
pub struct Outcome {
    pub primary: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub converged: bool,
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(primary: &Path, config: &impl Serialize) -> Self {
        Outcome {
            primary: primary.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed: None,
            converged: true,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic flow set from a JSON or TOML config
    Simulate(SimulateArgs),
    /// Fréchet mean flow of a flow set
    Mean(MeanArgs),
    /// Tangent-space functional PCA
    Pca(PcaArgs),
    /// Smooth scattered observations into a flow
    Smooth(SmoothArgs),
    /// Lag-window spectral density flows of multivariate series
    Spectral(SpectralArgs),
    /// k-means clustering of flows
    Cluster(ClusterArgs),
    /// Pairwise integrated distances between flows
    Dist(DistArgs),
    /// Sliding-window covariance flows from raw recordings
    IngestSliding(IngestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Mean(_) => "mean",
            Command::Pca(_) => "pca",
            Command::Smooth(_) => "smooth",
            Command::Spectral(_) => "spectral",
            Command::Cluster(_) => "cluster",
            Command::Dist(_) => "dist",
            Command::IngestSliding(_) => "ingest-sliding",
        }
    }

    pub fn run(&self) -> CliResult<Outcome> {
        match self {
            Command::Simulate(a) => simulate(a),
            Command::Mean(a) => dispatch(&a.input, |k| match k {
                ScalarKind::Real => mean::<f64>(a),
                ScalarKind::Complex => mean::<Complex64>(a),
            }),
            Command::Pca(a) => dispatch(&a.input, |k| match k {
                ScalarKind::Real => pca::<f64>(a),
                ScalarKind::Complex => pca::<Complex64>(a),
            }),
            Command::Smooth(a) => smooth(a),
            Command::Spectral(a) => spectral(a),
            Command::Cluster(a) => dispatch(&a.input, |k| match k {
                ScalarKind::Real => cluster::<f64>(a),
                ScalarKind::Complex => cluster::<Complex64>(a),
            }),
            Command::Dist(a) => dispatch(&a.input, |k| match k {
                ScalarKind::Real => dist::<f64>(a),
                ScalarKind::Complex => dist::<Complex64>(a),
            }),
            Command::IngestSliding(a) => ingest_sliding(a),
        }
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Appends a suffix to a file name: `out.bwf` -> `out.bwf.trace.csv`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn dispatch(
    input: &Path,
    run: impl FnOnce(ScalarKind) -> CliResult<Outcome>,
) -> CliResult<Outcome> {
    let bytes = read(input)?;
    let header = peek_header(&bytes).map_err(BwError::from)?;
    run(header.kind)
}

fn load<S: Scalar>(path: &Path, force_project: bool) -> CliResult<FlowSet<S>> {
    Ok(io::decode_flowset(
        &read(path)?,
        LoadOptions { force_project },
    )?)
}

/// Writes BWF1 bytes plus sidecar and records both as outputs.
fn emit(
    out: &mut Outcome,
    path: &Path,
    bytes: &[u8],
    content: ContentKind,
    annotations: &[(&str, serde_json::Value)],
) -> CliResult<()> {
    write_with_sidecar(path, bytes, content, annotations).map_err(|e| match e {
        BwError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => CliError::Bw(e),
    })?;
    out.outputs.push(path.to_path_buf());
    out.outputs.push(io::sidecar_path(path));
    Ok(())
}

fn emit_csv(
    out: &mut Outcome,
    path: &Path,
    write: impl FnOnce(fs::File) -> bwflow::Result<()>,
) -> CliResult<()> {
    write(create(path)?)?;
    out.outputs.push(path.to_path_buf());
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Config file (.toml, otherwise JSON) with dim, grid_size, n_flows, nu,
    /// truncation [default: 50], seed [default: 0], template
    /// [default: bm_bb_geodesic], dataset [default: perturbed] and law
    /// [default: "default"]
    #[arg(long)]
    pub config: PathBuf,
    /// Output BWF1 file
    #[arg(long, short)]
    pub out: PathBuf,
    /// Labels CSV for bimodal datasets [default: <out>.labels.csv]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Override the seed in the config
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    /// `T_i M T_i^T` with perturbations drawn from `law`.
    #[default]
    Perturbed,
    /// Two-population dataset with latent labels.
    Bimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLaw {
    Default,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Named(NamedLaw),
    Custom(PerturbationLaw),
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec::Named(NamedLaw::Default)
    }
}

impl LawSpec {
    fn resolve(self) -> PerturbationLaw {
        match self {
            LawSpec::Named(NamedLaw::Default) => PerturbationLaw::default(),
            LawSpec::Named(NamedLaw::Degenerate) => PerturbationLaw::degenerate(),
            LawSpec::Custom(l) => l,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSpec {
    #[serde(flatten)]
    pub sim: SimConfig,
    #[serde(default)]
    pub dataset: Dataset,
    #[serde(default)]
    pub law: LawSpec,
}

pub fn parse_simulate_spec(path: &Path, text: &str) -> CliResult<SimulateSpec> {
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let err = |message: String| CliError::Config {
        path: path.to_path_buf(),
        message,
    };
    let spec: SimulateSpec = if is_toml {
        toml::from_str(text).map_err(|e| err(e.to_string()))?
    } else {
        serde_json::from_str(text).map_err(|e| err(e.to_string()))?
    };
    spec.sim.validate().map_err(|e| err(e.to_string()))?;
    Ok(spec)
}

fn simulate(a: &SimulateArgs) -> CliResult<Outcome> {
    let text = String::from_utf8(read(&a.config)?).map_err(|_| CliError::Config {
        path: a.config.clone(),
        message: "not UTF-8".into(),
    })?;
    let mut spec = parse_simulate_spec(&a.config, &text)?;
    if let Some(seed) = a.seed {
        spec.sim.seed = seed;
    }
    let mut out = Outcome::new(&a.out, &json!({ "args": a, "spec": spec }));
    out.inputs.push(a.config.clone());
    out.seed = Some(spec.sim.seed);
    match spec.dataset {
        Dataset::Perturbed => {
            let set = sample_flows(&spec.sim, &spec.law.resolve())?;
            emit(
                &mut out,
                &a.out,
                &encode_flowset(&set)?,
                ContentKind::Flows,
                &[("simulation", serde_json::to_value(&spec).unwrap())],
            )?;
        }
        Dataset::Bimodal => {
            if spec.law != LawSpec::default() {
                out.notes.push(
                    "the bimodal dataset uses its own perturbation law; `law` is ignored".into(),
                );
            }
            let data = bimodal_dataset(&spec.sim)?;
            emit(
                &mut out,
                &a.out,
                &encode_flowset(&data.flows)?,
                ContentKind::Flows,
                &[
                    ("simulation", serde_json::to_value(&spec).unwrap()),
                    ("shapes", json!(data.shapes)),
                ],
            )?;
            let labels = a
                .labels
                .clone()
                .unwrap_or_else(|| with_suffix(&a.out, ".labels.csv"));
            emit_csv(&mut out, &labels, |f| write_labels_csv(&data.labels, f))?;
        }
    }
    Ok(out)
}

// -------------------------------------------------------------------- mean

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Fixed-point gradient descent
    Gd,
    /// Stochastic gradient descent with steps a/(k+b)
    Sgd,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct MeanOptions {
    /// Pointwise solver
    #[arg(long, value_enum, default_value_t = Algo::Gd)]
    pub algo: Algo,
    /// Gradient descent stops when ||T - I||_op on the range falls below this
    #[arg(long, default_value = "1e-8")]
    pub tol: f64,
    /// Gradient descent iteration cap
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Start each grid point from the previous grid point's mean
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub warm_start: bool,
    /// Stochastic descent steps
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Stochastic step numerator a
    #[arg(long, default_value_t = 2.0)]
    pub step_a: f64,
    /// Stochastic step offset b
    #[arg(long, default_value_t = 2.0)]
    pub step_b: f64,
    /// Stochastic descent seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl MeanOptions {
    fn algorithm<S: Scalar>(&self) -> MeanAlgorithm<S> {
        match self.algo {
            Algo::Gd => MeanAlgorithm::Gd(GdConfig {
                max_iter: self.max_iter,
                tol: self.tol,
                ..GdConfig::default()
            }),
            Algo::Sgd => MeanAlgorithm::Sgd(SgdConfig {
                steps: self.steps,
                a: self.step_a,
                b: self.step_b,
                seed: self.seed,
                sampling: Sampling::Reshuffle,
            }),
        }
    }

    fn config<S: Scalar>(&self) -> FlowMeanConfig<S> {
        FlowMeanConfig {
            algorithm: self.algorithm(),
            warm_start: self.warm_start,
        }
    }

    fn seed(&self) -> Option<u64> {
        (self.algo == Algo::Sgd).then_some(self.seed)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MeanArgs {
    /// Input BWF1 flow set
    pub input: PathBuf,
    /// Output BWF1 file holding the mean flow
    #[arg(long, short)]
    pub out: PathBuf,
    /// Convergence trace CSV [default: <out>.trace.csv]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Project invalid input matrices onto the PSD cone instead of failing
    #[arg(long)]
    pub force_project: bool,
    #[command(flatten)]
    pub mean: MeanOptions,
}

fn mean<S: Scalar>(a: &MeanArgs) -> CliResult<Outcome> {
    let set = load::<S>(&a.input, a.force_project)?;
    let mut out = Outcome::new(&a.out, a);
    out.inputs.push(a.input.clone());
    out.seed = a.mean.seed();
    let res = frechet_mean_flow(&set, &a.mean.config())?;
    emit(
        &mut out,
        &a.out,
        &encode_flow(&res.mean)?,
        ContentKind::Mean,
        &[],
    )?;
    let trace = a
        .trace
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    emit_csv(&mut out, &trace, |f| res.write_traces_csv(f))?;
    if let Some(r) = res
        .traces
        .iter()
        .filter_map(|t| t.final_residual())
        .reduce(f64::max)
    {
        out.notes
            .push(format!("largest final fixed-point residual {r:.3e}"));
    }
    let bad = res.unconverged();
    if !bad.is_empty() {
        out.converged = false;
        out.notes
            .push(format!("grid points {bad:?} did not converge"));
    }
    Ok(out)
}

// --------------------------------------------------------------------- pca

#[derive(Debug, Args, Serialize)]
pub struct PcaArgs {
    /// Input BWF1 flow set
    pub input: PathBuf,
    /// Mean flow: `auto` computes the Fréchet mean, otherwise a BWF1 file
    #[arg(long, default_value = "auto")]
    pub mean: String,
    /// Number of components to keep
    #[arg(long, short, default_value_t = 3)]
    pub k: usize,
    /// Output directory
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Project invalid input matrices onto the PSD cone instead of failing
    #[arg(long)]
    pub force_project: bool,
    #[command(flatten)]
    pub mean_options: MeanOptions,
}

fn pca<S: Scalar>(a: &PcaArgs) -> CliResult<Outcome> {
    let set = load::<S>(&a.input, a.force_project)?;
    create_dir(&a.out_dir)?;
    let mut out = Outcome::new(&a.out_dir, a);
    out.inputs.push(a.input.clone());
    let mean = if a.mean == "auto" {
        out.seed = a.mean_options.seed();
        let res = frechet_mean_flow(&set, &a.mean_options.config())?;
        if !res.all_converged() {
            out.converged = false;
            out.notes.push(format!(
                "mean flow: grid points {:?} did not converge",
                res.unconverged()
            ));
        }
        res.mean
    } else {
        let path = PathBuf::from(&a.mean);
        out.inputs.push(path.clone());
        let m = load::<S>(&path, a.force_project)?;
        if m.len() != 1 {
            return Err(CliError::Usage(format!(
                "{} holds {} flows, expected one mean flow",
                a.mean,
                m.len()
            )));
        }
        m.into_flows().remove(0)
    };
    let model = tangent_pca(&set, mean, a.k)?;
    write_pca_model(&a.out_dir, "pca", &model)?;
    for f in [
        "pca.json",
        "pca.components.bwf",
        "pca.components.bwf.json",
        "pca.mean.bwf",
        "pca.mean.bwf.json",
    ] {
        out.outputs.push(a.out_dir.join(f));
    }
    let scores = model.scores.map(|x| x.to_f64_lossy());
    emit_csv(&mut out, &a.out_dir.join("scores.csv"), |f| {
        write_scores_csv(&scores, f)
    })?;
    emit_csv(&mut out, &a.out_dir.join("variance.csv"), |f| {
        write_variance_csv(&model, f)
    })?;
    write_modes(&mut out, &a.out_dir, &model)?;
    out.notes.push(format!(
        "{} components kept; centering residual {:.3e}",
        model.n_components(),
        model.centering_residual.to_f64_lossy()
    ));
    Ok(out)
}

/// One file per component holding the flows at `-lambda*` and `+lambda*`.
fn write_modes<S: Scalar>(out: &mut Outcome, dir: &Path, model: &PcaModel<S>) -> CliResult<()> {
    for k in 0..model.n_components() {
        let lam = model.lambda_max(k)?;
        let flows = vec![
            mode_of_variation(model, k, -lam)?,
            mode_of_variation(model, k, lam)?,
        ];
        let bytes = encode_flowset(&FlowSet::new(flows)?)?;
        let l = lam.to_f64_lossy();
        emit(
            out,
            &dir.join(format!("mode_{}.bwf", k + 1)),
            &bytes,
            ContentKind::ModesOfVariation,
            &[("component", json!(k + 1)), ("lambda", json!([-l, l]))],
        )?;
    }
    Ok(())
}

// ------------------------------------------------------------------ smooth

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SmoothMode {
    /// Nadaraya-Watson kernel average
    Nw,
    /// Local Fréchet regression
    Lfr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Uniform,
    Epanechnikov,
    Gaussian,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Uniform => KernelKind::Uniform,
            KernelArg::Epanechnikov => KernelKind::Epanechnikov,
            KernelArg::Gaussian => KernelKind::GaussianTruncated,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SmoothArgs {
    /// Observations CSV: flow_id, time, then the d*d matrix entries row-major
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub obs: Option<PathBuf>,
    /// BWF1 flow set whose grid points serve as observations
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV of observed cells (flow, time_index) in --input [default: all cells]
    #[arg(long, requires = "input")]
    pub mask: Option<PathBuf>,
    /// Estimator
    #[arg(long, value_enum, default_value_t = SmoothMode::Nw)]
    pub mode: SmoothMode,
    /// Bandwidth, or `auto` for leave-one-flow-out selection over --candidates
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    /// Candidate bandwidths for `auto`
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.05,0.075,0.1,0.15,0.2,0.3,0.4,0.5"
    )]
    pub candidates: Vec<f64>,
    /// Kernel
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    /// Number of equispaced evaluation points on [0, 1]
    #[arg(long, default_value_t = 51)]
    pub grid: usize,
    /// Gradient descent tolerance for local Fréchet regression
    #[arg(long, default_value = "1e-8")]
    pub tol: f64,
    /// Gradient descent iteration cap for local Fréchet regression
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Bandwidth sweep report [default: <out>.sweep.csv when --bandwidth auto]
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Output BWF1 file
    #[arg(long, short)]
    pub out: PathBuf,
}

fn smooth(a: &SmoothArgs) -> CliResult<Outcome> {
    let mut out = Outcome::new(&a.out, a);
    let obs: ScatterObs<f64> = match (&a.obs, &a.input) {
        (Some(path), _) => {
            out.inputs.push(path.clone());
            read_scatter_csv(&read(path)?[..])?
        }
        (None, Some(path)) => {
            out.inputs.push(path.clone());
            let set = load::<f64>(path, false)?;
            match &a.mask {
                Some(m) => {
                    out.inputs.push(m.clone());
                    io::masked_observations(&set, &read_mask_csv(&read(m)?[..])?)?
                }
                None => ScatterObs::from_flows(set.flows())?,
            }
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --obs or --input is required".into(),
            ))
        }
    };
    let kind = KernelKind::from(a.kernel);
    let estimator = match a.mode {
        SmoothMode::Nw => MeanEstimator::NadarayaWatson,
        SmoothMode::Lfr => MeanEstimator::LocalFrechet,
    };
    let h = if a.bandwidth == "auto" {
        let rows = mean_bandwidth_sweep(&obs, kind, &a.candidates, estimator)?;
        let path = a
            .sweep
            .clone()
            .unwrap_or_else(|| with_suffix(&a.out, ".sweep.csv"));
        emit_csv(&mut out, &path, |f| write_sweep_csv(&rows, f))?;
        best_bandwidth(&rows).ok_or_else(|| {
            CliError::Usage("every candidate bandwidth leaves some held-out time uncovered".into())
        })?
    } else {
        a.bandwidth.parse::<f64>().map_err(|_| {
            CliError::Usage(format!(
                "bandwidth must be a number or `auto`, got {:?}",
                a.bandwidth
            ))
        })?
    };
    let kernel = Kernel::new(kind, h)?;
    let grid = Grid::uniform(a.grid)?;
    let flow: Flow<f64> = match a.mode {
        SmoothMode::Nw => nw_smooth(&obs, &kernel, &grid)?,
        SmoothMode::Lfr => {
            let cfg = GdConfig {
                tol: a.tol,
                max_iter: a.max_iter,
                ..GdConfig::default()
            };
            let res = lfr_estimate(&obs, &kernel, &grid, &cfg)?;
            let clipped = res.flags.iter().filter(|f| f.clipped).count();
            if clipped > 0 {
                out.notes.push(format!(
                    "{clipped} evaluation times fell back to clipped weights"
                ));
            }
            res.flow
        }
    };
    out.notes.push(format!("bandwidth {h}"));
    emit(
        &mut out,
        &a.out,
        &encode_flow(&flow)?,
        ContentKind::Smoothed,
        &[
            ("bandwidth", json!(h)),
            ("mode", json!(a.mode)),
            ("kernel", json!(a.kernel)),
        ],
    )?;
    Ok(out)
}

// ---------------------------------------------------------------- spectral

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WindowArg {
    Bartlett,
    Rect,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    /// Panel CSV: series_id, time_index, x_1, ..., x_d
    pub panel: PathBuf,
    /// Largest lag in the lag-window sum
    #[arg(long)]
    pub max_lag: usize,
    /// Number of equispaced frequencies on [0, pi]
    #[arg(long, default_value_t = 65)]
    pub freqs: usize,
    /// Lag window
    #[arg(long, value_enum, default_value_t = WindowArg::Bartlett)]
    pub window: WindowArg,
    /// Take entrywise logarithms first
    #[arg(long)]
    pub log: bool,
    /// Take first differences
    #[arg(long)]
    pub difference: bool,
    /// Trailing moving average over this many times
    #[arg(long)]
    pub ma_smooth: Option<usize>,
    /// Subtract the series mean
    #[arg(long)]
    pub center: bool,
    /// Output BWF1 file (complex)
    #[arg(long, short)]
    pub out: PathBuf,
}

fn spectral(a: &SpectralArgs) -> CliResult<Outcome> {
    let mut out = Outcome::new(&a.out, a);
    out.inputs.push(a.panel.clone());
    let table = read_series_csv(&read(&a.panel)?[..])?;
    let mut ops = Vec::new();
    if a.log {
        ops.push(Preprocess::Log);
    }
    if a.difference {
        ops.push(Preprocess::Difference);
    }
    if let Some(w) = a.ma_smooth {
        ops.push(Preprocess::MovingAverage(w));
    }
    if a.center {
        ops.push(Preprocess::Center);
    }
    let window = match a.window {
        WindowArg::Bartlett => LagWindow::Bartlett,
        WindowArg::Rect => LagWindow::Rectangular,
    };
    let freqs = Grid::<f64>::uniform(a.freqs)?.points().to_vec();
    let flows = table
        .panels()?
        .iter()
        .map(|p| Ok(spectral_density_flow(&p.apply_all(&ops)?, a.max_lag, &freqs, window)?.flow))
        .collect::<CliResult<Vec<_>>>()?;
    let set = FlowSet::new(flows)?;
    let omegas: Vec<f64> = freqs.iter().map(|t| t * std::f64::consts::PI).collect();
    emit(
        &mut out,
        &a.out,
        &encode_flowset(&set)?,
        ContentKind::SpectralFlows,
        &[
            ("angular_frequencies", json!(omegas)),
            ("series_ids", json!(table.ids)),
            ("max_lag", json!(a.max_lag)),
            ("window", json!(a.window)),
            ("preprocessing", json!(ops)),
        ],
    )?;
    Ok(out)
}

// ----------------------------------------------------------------- cluster

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    /// Euclidean distance between tangent PCA scores
    Scores,
    /// Integrated Bures-Wasserstein distance between flows
    Raw,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    /// Input BWF1 flow set
    pub input: PathBuf,
    /// Number of clusters
    #[arg(
        long,
        short,
        conflicts_with = "k_range",
        required_unless_present = "k_range"
    )]
    pub k: Option<usize>,
    /// Inclusive range of cluster counts for the elbow table, e.g. 1..8
    #[arg(long)]
    pub k_range: Option<String>,
    /// Distance used for clustering
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Seeded k-means++ restarts; the best is kept
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Lloyd iteration cap per restart
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Seed for the restarts
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Components of the tangent PCA used in scores mode
    #[arg(long, default_value_t = 3)]
    pub pca_k: usize,
    /// Output directory
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Project invalid input matrices onto the PSD cone instead of failing
    #[arg(long)]
    pub force_project: bool,
}

pub fn parse_k_range(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("k range must look like 1..8, got {s:?}"));
    let (lo, hi) = s
        .split_once("..")
        .or_else(|| s.split_once(':'))
        .or_else(|| s.split_once('-'))
        .ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| bad())?;
    if lo == 0 || hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn cluster<S: Scalar>(a: &ClusterArgs) -> CliResult<Outcome> {
    let set = load::<S>(&a.input, a.force_project)?;
    create_dir(&a.out_dir)?;
    let mut out = Outcome::new(&a.out_dir, a);
    out.inputs.push(a.input.clone());
    out.seed = Some(a.seed);
    let mode = match a.mode {
        ModeArg::Scores => ClusterMode::Scores,
        ModeArg::Raw => ClusterMode::Raw,
    };
    let cfg = KMeansConfig {
        restarts: a.restarts,
        max_iter: a.max_iter,
        seed: a.seed,
        ..KMeansConfig::new(mode)
    };
    let model = match mode {
        ClusterMode::Scores => {
            let res = frechet_mean_flow(&set, &FlowMeanConfig::default())?;
            if !res.all_converged() {
                out.converged = false;
                out.notes
                    .push("mean flow for the score model did not converge".into());
            }
            Some(tangent_pca(&set, res.mean, a.pca_k)?)
        }
        ClusterMode::Raw => None,
    };
    let ks = match (&a.k_range, a.k) {
        (Some(r), _) => parse_k_range(r)?,
        (None, Some(k)) => vec![k],
        (None, None) => {
            return Err(CliError::Usage(
                "one of --k or --k-range is required".into(),
            ))
        }
    };
    let table = elbow_scores(&set, &ks, &cfg, model.as_ref())?;
    emit_csv(&mut out, &a.out_dir.join("elbow.csv"), |f| {
        table.write_csv(f)
    })?;
    let chosen = match (a.k, table.elbow()) {
        (Some(k), _) => k,
        (None, Some(k)) => k,
        (None, None) => *ks.last().unwrap(),
    };
    if a.k.is_none() {
        out.notes.push(format!(
            "largest second difference of inertia at k = {chosen}"
        ));
    }
    let res = kmeans_flows(&set, chosen, &cfg, model.as_ref())?;
    if !res.converged {
        out.converged = false;
        out.notes.push(format!(
            "k-means did not settle within {} iterations",
            a.max_iter
        ));
    }
    emit_csv(&mut out, &a.out_dir.join("labels.csv"), |f| {
        write_labels_csv(&res.labels, f)
    })?;
    emit(
        &mut out,
        &a.out_dir.join("centroids.bwf"),
        &encode_flowset(&FlowSet::new(res.centroids.clone())?)?,
        ContentKind::Centroids,
        &[
            ("k", json!(chosen)),
            ("inertia", json!(res.inertia)),
            ("mode", json!(a.mode)),
        ],
    )?;
    let dist = distance_matrix(&set)?.map(|x| x.to_f64_lossy());
    emit_csv(&mut out, &a.out_dir.join("distances.csv"), |f| {
        write_matrix_csv(&dist, "flow", "f", f)
    })?;
    Ok(out)
}

// -------------------------------------------------------------------- dist

#[derive(Debug, Args, Serialize)]
pub struct DistArgs {
    /// Input BWF1 flow set
    pub input: PathBuf,
    /// Output CSV distance matrix
    #[arg(long, short)]
    pub out: PathBuf,
    /// Project invalid input matrices onto the PSD cone instead of failing
    #[arg(long)]
    pub force_project: bool,
}

fn dist<S: Scalar>(a: &DistArgs) -> CliResult<Outcome> {
    let set = load::<S>(&a.input, a.force_project)?;
    let mut out = Outcome::new(&a.out, a);
    out.inputs.push(a.input.clone());
    let d = distance_matrix(&set)?.map(|x: RealOf<S>| x.to_f64_lossy());
    emit_csv(&mut out, &a.out, |f| write_matrix_csv(&d, "flow", "f", f))?;
    Ok(out)
}

// ---------------------------------------------------------- ingest-sliding

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Raw CSV: subject_id, [run_id,] time_index, x_1, ..., x_d
    pub raw: PathBuf,
    /// Half-width h; each window spans 2h + 1 samples
    #[arg(long)]
    pub window: usize,
    /// Distance between consecutive window centres
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// How repeated runs of one subject are averaged
    #[arg(long, value_enum, default_value_t = RunAveraging::Euclidean)]
    pub averaging: RunAveraging,
    /// Output BWF1 file
    #[arg(long, short)]
    pub out: PathBuf,
}

fn ingest_sliding(a: &IngestArgs) -> CliResult<Outcome> {
    let mut out = Outcome::new(&a.out, &json!({ "args": a, "truncation": TRUNCATION_NOTE }));
    out.inputs.push(a.raw.clone());
    let rec = read_recordings(&read(&a.raw)?[..])?;
    let set = sliding_flowset(&rec, a.window, a.stride, a.averaging)?;
    emit(
        &mut out,
        &a.out,
        &encode_flowset(&set)?,
        ContentKind::Flows,
        &[
            ("subjects", json!(rec.subjects)),
            ("truncation", json!(TRUNCATION_NOTE)),
        ],
    )?;
    Ok(out)
}
