//! Error type shared by all modules.
//!
//! Errors fall into three categories that the CLI maps to distinct exit
//! codes: configuration (bad input data), numerical (solver breakdowns),
//! and I/O (file problems).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scenario, grid or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Iterative solver did not reach the requested tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Direct solve hit a matrix that is singular to machine precision.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Velocity field cannot transport anything (e.g. all fluxes zero).
    #[error("degenerate flow field: {0}")]
    DegenerateFlow(String),

    /// Online reduced system could not be solved for the given coefficients.
    #[error("reduced solve failed for theta {theta:?}: {reason}")]
    ReducedSolve { theta: Vec<f64>, reason: String },

    /// Any other numerical inconsistency (NaN fields, indefinite forms, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Point/cell queries outside their domain of validity.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk artifact (raster, model container, trajectory).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Process exit code category: 2 = configuration, 3 = numerical, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Convergence { .. }
            | Error::Singular(_)
            | Error::DegenerateFlow(_)
            | Error::ReducedSolve { .. }
            | Error::Numerical(_)
            | Error::Domain(_) => 3,
            Error::Io(_) | Error::Format(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
