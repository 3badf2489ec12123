use thiserror::Error;

use crate::reduction::ValidationReport;

/// Errors produced by the reduction, solver and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid Stokes-type system: {0}")]
    InvalidSystem(ValidationReport),

    #[error("resonant spectrum: Lyapunov operator is singular (min |λi + λj| = {0:e})")]
    ResonantSpectrum(f64),

    #[error("k-way Lyapunov operator is ill-conditioned (min |Σλ| = {min_sum:e}, spectral scale {scale:e})")]
    IllConditioned { min_sum: f64, scale: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("{method} did not converge within {iterations} iterations")]
    IterationLimit {
        method: &'static str,
        iterations: usize,
    },

    #[error("bordered system is singular: numerical rank {rank}, expected {expected}")]
    SingularBordered { rank: usize, expected: usize },

    #[error("inconsistent inputs: out-of-range residual {0:e}")]
    InconsistentState(f64),

    #[error("operator too large to assemble densely ({entries} entries)")]
    TooLarge { entries: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ResonantSpectrum(_)
                | Error::IllConditioned { .. }
                | Error::Singular(_)
                | Error::NoStabilizingSolution(_)
                | Error::IterationLimit { .. }
                | Error::SingularBordered { .. }
                | Error::InconsistentState(_)
                | Error::TooLarge { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
