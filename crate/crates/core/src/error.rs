use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// The requested score needs features and a classifier head.
    #[error("missing model access: {0}")]
    MissingModelAccess(String),

    /// Ranking metric asked for with only one class present.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergedTraining { epoch: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl FpError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn invalid_param(msg: impl Into<String>) -> Self {
        Self::InvalidParam(msg.into())
    }

    /// Machine-readable tag used in null-metric notes.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidInput(_) => "invalid_input",
            Self::InvalidParam(_) => "invalid_param",
            Self::MissingModelAccess(_) => "missing_model_access",
            Self::DegenerateLabels(_) => "degenerate_labels",
            Self::DivergedTraining { .. } => "diverged_training",
            Self::Parse { .. } => "parse",
            Self::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for FpError {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FpError>;
