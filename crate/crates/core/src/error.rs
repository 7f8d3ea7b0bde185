use thiserror::Error;

/// Errors raised by the solvers and models in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("soliton search did not converge: {reason} (residual history: {history:?})")]
    NonConvergence { reason: String, history: Vec<f64> },

    #[error("boost error: {0}")]
    Boost(String),

    #[error("degenerate jump: the jump rate vanishes for this state")]
    DegenerateJump,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change of the residual in the bracket; sweep: {sweep:?}")]
    RootNotBracketed { sweep: Vec<(f64, f64)> },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("boundary contamination: tail mass {tail_mass:e} exceeds {limit:e}")]
    BoundaryContamination { tail_mass: f64, limit: f64 },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
