use thiserror::Error;

/// Errors raised by the simulator and its diagnostics.
#[derive(Debug, Error)]
pub enum HsgsError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("eigensolver did not converge: {what} (worst residual {residual:.3e})")]
    NonConvergence { what: String, residual: f64 },

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("divergence contamination: top-lid |w| = {0:.3e}")]
    DivergenceContamination(f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HsgsError>;
