//! Error type shared across the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The iterative linear solver did not reach the requested tolerance.
    #[error("linear solver stalled at relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    /// A simulation time step or assimilation round failed; wraps the cause.
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A forward run for one ensemble member failed.
    #[error("realization {index} failed: {source}")]
    RealizationFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Random field generation could not produce a valid realization.
    #[error("field generation failed: {0}")]
    Generation(String),

    /// A data file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Ingestion {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// No candidate subset passed the loss threshold.
    #[error("no subset passed the loss threshold sigma = {sigma:.6e}")]
    EmptyPosterior { sigma: f64 },

    /// The assimilation update matrix stayed singular after regularization.
    #[error("assimilation update failed: {0}")]
    Assimilation(String),

    /// The prior envelope does not cover enough of the observation band.
    #[error(
        "prior envelope covers {achieved:.4} of observed columns, required {required:.4}; \
         introduce more prior realizations"
    )]
    CoverageGate { achieved: f64, required: f64 },

    /// The subset count does not fit the supported integer range.
    #[error("subset count for n = {n}, k_max = {k_max} overflows the supported range")]
    CountOverflow { n: usize, k_max: usize },

    /// The threshold search could not reach the requested coverage.
    #[error(
        "threshold search reached coverage {best_coverage:.4} at sigma = {best_sigma:.6e}, \
         required {target:.4}"
    )]
    SigmaSearch {
        best_sigma: f64,
        best_coverage: f64,
        target: f64,
    },

    /// A case configuration file is malformed or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An underlying I/O operation failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::StepFailed {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_realization(self, index: usize) -> Self {
        Error::RealizationFailed {
            index,
            source: Box::new(self),
        }
    }
}
