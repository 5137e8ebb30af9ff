use thiserror::Error;

/// Errors produced by the estimator, its data pipeline and persistence layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{context}`: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss (propensity={propensity}, pre={pre}, post={post})")]
    NonFiniteLoss { propensity: f64, pre: f64, post: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("singular normal equations ({0}); increase lambda")]
    Singular(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("dataset has no oracle columns (y0, y1, te)")]
    MissingOracle,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt document: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// numeric or IO failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Config(_)
                | Error::InsufficientData(_)
                | Error::LengthMismatch { .. }
                | Error::Parse { .. }
                | Error::MissingColumn(_)
                | Error::MissingOracle
                | Error::Version { .. }
                | Error::Corrupt(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
