use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum BeamError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("division domain error: {0}")]
    Domain(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("ill-conditioned system (condition estimate {cond:.3e} > {limit:.1e})")]
    Numeric { cond: f64, limit: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value at sample {sample}: {what}")]
    NonFinite { sample: usize, what: String },

    #[error("training aborted at batch {batch}: non-finite gradient")]
    TrainingAbort { batch: usize },

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BeamError> = std::result::Result<T, E>;
