use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration is not supported on the given action subset")]
    NotSupported,

    #[error("point is not boundary-critical")]
    NotBoundaryCritical,

    #[error("cost function {index} is not strictly decreasing")]
    NonDecreasingCost { index: usize },

    #[error("enumeration is limited to games with at most {max} actions (got {found})")]
    TooManyActions { max: usize, found: usize },

    #[error("empty equilibrium set after filtering")]
    EmptySet,

    #[error("state left the simplex at t = {time}: coordinate {index} = {value:e}")]
    LeftSimplex { time: f64, index: usize, value: f64 },

    #[error("step size underflow at t = {time} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },

    #[error("no potential attached to the game")]
    NoPotential,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("scenario validation failed at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("failed to parse scenario at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }

    /// True for failures of the numerical integrator, as opposed to input errors.
    pub fn is_integrator_error(&self) -> bool {
        matches!(self, Error::LeftSimplex { .. } | Error::StepUnderflow { .. })
    }
}
