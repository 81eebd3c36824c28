use std::fmt;

use crate::mesh::Side;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the numerical modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("tensor is not elliptic at ({:.6}, {:.6}): [[{a11}, {a12}], [{a12}, {a22}]]", .x[0], .x[1])]
    EllipticityViolation {
        x: [f64; 2],
        a11: f64,
        a12: f64,
        a22: f64,
    },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("weight support on {side} side at {value} is not aligned with the mesh nodes")]
    Misalignment { side: Side, value: f64 },

    #[error("cell problem is singular beyond the constant kernel: {0}")]
    CellIdentification(String),

    #[error("parameter {value} lies outside the tabulated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("forward model failed on particle {particle} at iteration {iteration}: {source}")]
    Forward {
        particle: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forward model failed on sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by user input (configuration, files, shapes)
    /// rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::Misalignment { .. }
        )
    }
}

/// Problems found while reading a scenario configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value `{value}` for key `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        })
    }
}
