use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// Input data could not be ingested; `line` is 1-based when known.
    #[error("ingestion error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Ingestion { line: Option<u64>, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The normal-equation matrix stayed singular after ridge jitter.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    /// A fit or criterion degenerated (for example zero residual degrees of freedom).
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn ingestion(line: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
