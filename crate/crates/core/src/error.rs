use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in input to {0}")]
    NonFiniteInput(&'static str),

    #[error("linear system is singular (ridge tried: {ridge:e})")]
    SingularSystem { ridge: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid class target {target} for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },

    #[error("non-finite gradient entry at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite importance value for datum {0}")]
    NonFiniteImportance(usize),

    #[error("negative scalar importance for datum {0}")]
    NegativeImportance(usize),

    #[error("all importance values are zero")]
    AllZeroImportance,

    #[error("sampled datum {0} has zero probability")]
    ZeroProbabilitySample(usize),

    #[error("every technique assigns zero probability to datum {0}")]
    AllTechniquesZero(usize),

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed IDX file: {0}")]
    MalformedIdx(String),

    #[error("IDX image count {images} does not match label count {labels}")]
    LabelImageCountMismatch { images: usize, labels: usize },

    #[error("requested an empty subset")]
    EmptySubset,

    #[error("config parse error at `{path}`: {message}")]
    ConfigParse { path: String, message: String },

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("metric files belong to different tasks: {0} vs {1}")]
    TaskMismatch(String, String),

    #[error("malformed metrics file {path}: {message}")]
    MalformedMetrics { path: PathBuf, message: String },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach epoch/step context to a trainer failure.
    pub(crate) fn at(self, epoch: usize, step: usize) -> Error {
        match self {
            e @ Error::Training { .. } => e,
            e => Error::Training {
                epoch,
                step,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping trainer context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Training { source, .. } => source.root(),
            e => e,
        }
    }
}
