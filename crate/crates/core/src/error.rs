use std::path::PathBuf;

/// Errors raised by the geotopic engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("malformed {format} file: {message}")]
    MalformedFile { format: &'static str, message: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("non-finite embedding value in post {0:?}")]
    NonFiniteEmbedding(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("degenerate embedding{}", .0.as_ref().map(|id| format!(" for node {id}")).unwrap_or_default())]
    DegenerateEmbedding(Option<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("asymmetric graph: edge ({0}, {1}) has no matching reverse edge")]
    AsymmetricGraph(usize, usize),

    #[error("undefined intra-cluster similarity: no cluster has at least two members")]
    UndefinedIntra,

    #[error("undefined inter-cluster similarity: fewer than two non-empty clusters")]
    UndefinedInter,

    #[error("empty positive set")]
    EmptyPositives,

    #[error("eigensolver failed to converge (residual norm {residual:e})")]
    EigenSolver { residual: f64 },

    #[error("zero variance")]
    ZeroVariance,

    #[error("corpus has no text; keyword extraction requires text for every post")]
    MissingText,

    #[error("no valid topics (each topic needs at least two keywords)")]
    NoValidTopics,

    #[error("training diverged at epoch {epoch}, chunk {chunk}: {message}")]
    Divergence {
        epoch: usize,
        chunk: usize,
        message: String,
    },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("trace/parameter mismatch: {0}")]
    TraceMismatch(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error stems from bad user input rather than an internal failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::Io { .. }
            | Error::MalformedRecord { .. }
            | Error::MalformedFile { .. }
            | Error::CoordinateOutOfRange { .. }
            | Error::DuplicateId(_)
            | Error::NonFiniteEmbedding(_)
            | Error::EmptyCorpus
            | Error::InvalidParameter(_)
            | Error::MissingText
            | Error::Json(_) => true,
            Error::DimensionMismatch { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
