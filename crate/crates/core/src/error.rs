use thiserror::Error;

/// Errors produced by data ingestion, estimation and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(#[from] ParseError),

    /// The moment conditions do not pin down the parameter.
    #[error("under-identified at {stage}: {detail}")]
    Identification { stage: String, detail: String },

    #[error("weight matrix error: {0}")]
    Weight(String),

    /// All pilot residuals vanish, so no residual-based weight exists.
    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn identification(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Identification {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    /// Prefix the failing stage, keeping the variant.
    pub fn at_stage(self, stage: &str) -> Self {
        match self {
            Error::Identification { stage: s, detail } => Error::Identification {
                stage: format!("{stage}/{s}"),
                detail,
            },
            Error::Weight(m) => Error::Weight(format!("{stage}: {m}")),
            Error::DegenerateWeight(m) => Error::DegenerateWeight(format!("{stage}: {m}")),
            Error::Inference(m) => Error::Inference(format!("{stage}: {m}")),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// CSV ingestion failures, each carrying the offending location.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("file is empty or has no data rows")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: non-finite value `{value}`")]
    NonFinite {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
