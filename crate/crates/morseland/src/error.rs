use thiserror::Error;

/// Failures surfaced by the analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain")]
    Domain { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("trajectory left the domain at {point:?} (t = {time})")]
    Exit { point: Vec<f64>, time: f64 },

    #[error("no convergence: {0}")]
    Timeout(String),

    #[error("not a critical point: |grad V| = {grad_norm:e}")]
    NotCritical { grad_norm: f64 },

    #[error("not a cusp candidate: smallest |eigenvalue| = {min_abs_eigenvalue:e}")]
    NotCandidate { min_abs_eigenvalue: f64 },

    #[error("stochastic path kept leaving the domain near {point:?}")]
    Confinement { point: Vec<f64> },

    #[error("grid under-resolves the measure: {0}")]
    Underresolved(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by the caller rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Input(_) | Error::Domain { .. })
    }
}
