use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("segment has zero length")]
    DegenerateSegment,

    #[error("non-finite coordinate in {0}")]
    NonFiniteCoordinate(&'static str),

    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("negative rain rate {value} at cell {index}")]
    NegativeRain { index: usize, value: f64 },

    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("noise standard deviation of link {index} is not positive")]
    DegenerateNoise { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("bridge levels must satisfy 0 < l < t, got l={l}, t={t}")]
    InvalidLevel { l: usize, t: usize },

    #[error("denoiser format: {0}")]
    Format(String),

    #[error("unsupported denoiser node kind {0}")]
    UnsupportedNode(u32),

    #[error("{sampler}: non-finite value at step {step}: {detail}")]
    NonFinite {
        sampler: &'static str,
        step: usize,
        detail: String,
    },

    #[error("{sampler}: diverged at step {step} (norm {norm:e})")]
    Diverged {
        sampler: &'static str,
        step: usize,
        norm: f64,
    },

    #[error("TDS: every particle weight underflowed at step {step}")]
    WeightUnderflow { step: usize },

    #[error("{tag}: algorithm defined in external reference ({reference}); not implemented")]
    NotImplemented {
        tag: String,
        reference: &'static str,
    },

    #[error("unknown algorithm tag {tag:?}; known: {known}")]
    UnknownAlgorithm { tag: String, known: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("grid of {cells} cells exceeds the dense-kernel limit of {limit}")]
    TooLarge { cells: usize, limit: usize },

    #[error("ensemble of {got} samples is below the minimum {need}")]
    UndersizedEnsemble { got: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
