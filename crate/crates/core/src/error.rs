use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Input could not be interpreted in the declared format.
    #[error("format error: {0}")]
    Format(String),

    #[error("invalid region code: {0}")]
    InvalidRegion(String),

    #[error("invalid time cell: {0}")]
    InvalidTimeCell(String),

    #[error("timestamp out of supported range (1970-2100): {0}")]
    TimestampOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no content: {0}")]
    NoContent(String),

    /// A loaded table violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("cannot aggregate an empty cell")]
    EmptyCell,

    #[error("counties missing from mapping: {}", .0.join(", "))]
    UnmappedCounties(Vec<String>),

    #[error("insufficient users: need at least {required}, got {actual}")]
    InsufficientUsers { required: usize, actual: usize },

    #[error("undefined variance: {0}")]
    UndefinedVariance(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("undefined effect size: {0}")]
    UndefinedEffect(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True when the error stems from bad input or configuration rather than
    /// a failure inside the library itself.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
            && !matches!(self, Error::Io(e) if e.kind() != std::io::ErrorKind::NotFound)
    }
}
