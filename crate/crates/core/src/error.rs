use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },

    #[error("no observed entries")]
    EmptyObservations,

    #[error("evaluation set has zero reference energy")]
    ZeroReference,

    #[error("input matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("singular row system at row {row} (condition estimate {condition:e})")]
    SingularRow { row: usize, condition: f64 },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "oracle did not converge after {iterations} iterations (primal {primal:e}, dual {dual:e})"
    )]
    OracleNotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Whether the error stems from a numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::SingularRow { .. } | Error::OracleNotConverged { .. } => true,
            Error::Iteration { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
