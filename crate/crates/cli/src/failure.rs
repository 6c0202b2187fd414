//! Process exit codes.

use beamkit::error::BeamError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Bad flags, config keys or flag combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Training stopped on a non-finite value; best parameters were kept.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn beam_code(e: &BeamError) -> i32 {
    use BeamError::*;
    match e {
        InvalidInput(_) | Config(_) | Capacity(_) => EXIT_USAGE,
        Shape { .. } | Format { .. } | Checkpoint(_) | Io(_) | Json(_) => EXIT_DATA,
        Domain(_) | Rank(_) | Numeric { .. } | Degenerate(_) | NonFinite { .. } | TrainingAbort { .. }
        | Infeasible(_) | Solver(_) | Lifecycle(_) => EXIT_NUMERIC,
    }
}

/// Exit code for an error chain: the first recognized cause decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericFailure>() {
            return EXIT_NUMERIC;
        }
        if let Some(b) = cause.downcast_ref::<BeamError>() {
            return beam_code(b);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_NUMERIC
}
