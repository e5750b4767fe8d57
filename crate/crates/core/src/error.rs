use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot parse format `{token}`: {reason}")]
    FormatParse { token: String, reason: String },

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid quantization scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid scales: {0}")]
    InvalidScales(String),

    #[error("invalid code {code} for format {format}")]
    InvalidCode { code: u8, format: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty batch list")]
    EmptyBatches,

    #[error("undefined NSR: reference tensor is all zero")]
    UndefinedNsr,

    #[error("missing blob {0}")]
    MissingBlob(String),

    #[error("blob {name}: expected {expected} bytes, found {found}")]
    BlobSizeMismatch { name: String, expected: usize, found: usize },

    #[error("bad magic: expected `{expected}`, found `{found}`")]
    BadMagic { expected: String, found: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u64, found: u64 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("layers `{prev}` and `{next}` are not chained: `{prev}` outputs {out_dim} but `{next}` expects {in_dim}")]
    LayerChain { prev: String, next: String, out_dim: usize, in_dim: usize },

    #[error("layer {0} not calibrated")]
    NotCalibrated(String),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("candidate {format} has bit-width {found}, expected {expected}")]
    CandidateBitWidth { format: String, expected: u32, found: u32 },

    #[error("metric evaluation failed for layer {layer}: {source}")]
    MetricEvaluation {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
