use thiserror::Error;

pub type Result<T, E = BwError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BwError {
    #[error("matrix is not Hermitian (asymmetry {residual:.3e} exceeds tolerance)")]
    NonHermitian { residual: f64 },
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error(
        "matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})"
    )]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("kernel of the source is not contained in the kernel of the target (residual {residual:.3e})")]
    KernelNotNested { residual: f64 },
    #[error("kernel nesting fails for flow {flow} at grid index {time}")]
    KernelNotNestedAt { flow: usize, time: usize },
    #[error("interpolation parameter {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("time grids differ")]
    GridMismatch,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no sample is positive definite and the initial point is singular")]
    AllDegenerate,
    #[error("pointwise Fréchet mean failed at grid index {index}: {source}")]
    PointwiseFailure {
        index: usize,
        #[source]
        source: Box<BwError>,
    },
    #[error("requested {k} components but only {n} samples")]
    KTooLarge { k: usize, n: usize },
    #[error("component index {k} out of range (model has {available})")]
    KOutOfRange { k: usize, available: usize },
    #[error("|lambda| = {lambda} exceeds the admissible bound {max:.6e}")]
    LambdaTooLarge { lambda: f64, max: f64 },
    #[error("no observation has positive kernel weight at t = {0:?}")]
    EmptyWindow(Vec<f64>),
    #[error("local-linear design is singular at (s, t) = ({s}, {t})")]
    SingularDesign { s: f64, t: f64 },
    #[error("iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("lag {lag} too large for series of length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("frequency grid is empty")]
    EmptyFreqGrid,
    #[error("frequency grid of {points} points is too coarse for max lag {max_lag} (need at least {needed})")]
    GridTooCoarse {
        points: usize,
        max_lag: usize,
        needed: usize,
    },
    #[error("window of {window} samples exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("series have unequal lengths ({0} vs {1})")]
    RaggedSeries(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("BWF1: {0}")]
    Bwf1(#[from] crate::io::Bwf1Error),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BwError {
    /// True for errors that mean an iteration ran out of budget rather than
    /// the input being malformed.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            BwError::NonConvergence { .. } => true,
            BwError::PointwiseFailure { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}
