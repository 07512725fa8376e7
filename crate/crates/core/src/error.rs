use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("point {value} lies outside the basis domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("derivative order {requested} requires spline order > {requested}, basis has order {order}")]
    DerivativeOrder { requested: usize, order: usize },

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("model error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("missing exogenous field `{0}`")]
    MissingExogenous(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("term `{0}` does not influence the data (degenerate coefficient)")]
    DegenerateTerm(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("bootstrap failed: {failed} of {total} replicates did not converge")]
    Bootstrap { failed: usize, total: usize },

    #[error("format error: {0}")]
    Format(#[from] crate::datasets::FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
