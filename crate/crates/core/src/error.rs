use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("vocabulary mismatch: {what} (expected {expected}, found {found})")]
    VocabMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("blank is not a valid input for {0}")]
    BlankNotAllowed(&'static str),

    #[error("enumeration of {count} alignments exceeds cap {cap}")]
    TooManyAlignments { count: u128, cap: u128 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("avg internal LM requires encoder context")]
    MissingEncoderContext,

    #[error("grid cell beta={beta} gamma={gamma}: {source}")]
    GridCell {
        beta: f64,
        gamma: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported checkpoint format version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
