//! Exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage: missing inputs, unknown scenario, invalid option or config |
//! | 3 | invalid graph input |
//! | 4 | missing fit artifacts |
//! | 5 | corrupted or incompatible checkpoint |
//! | 6 | numerical failure during fitting |
//! | 7 | partitioning failure |
//! | 10 | I/O or serialization error |

use spiked_laplacian::Error;

pub const USAGE: u8 = 2;
pub const INVALID_GRAPH: u8 = 3;
pub const MISSING_ARTIFACTS: u8 = 4;
pub const CORRUPT: u8 = 5;
pub const NUMERICAL: u8 = 6;
pub const PARTITION: u8 = 7;
pub const IO: u8 = 10;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub name: String,
    pub message: String,
}

impl Failure {
    pub fn usage(name: &str, message: impl Into<String>) -> Self {
        Failure {
            code: USAGE,
            name: name.into(),
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Failure {
            code: MISSING_ARTIFACTS,
            name: "MissingFitArtifacts".into(),
            message: message.into(),
        }
    }
}

pub fn code_for(e: &Error) -> u8 {
    let root = match e {
        Error::Step { source, .. } => source.as_ref(),
        other => other,
    };
    match root {
        Error::ZeroDegreeVertex(_)
        | Error::AsymmetricInput(_)
        | Error::NegativeWeight(..)
        | Error::NonZeroDiagonal(_)
        | Error::NotSquare(..)
        | Error::DisconnectedGraph
        | Error::DimensionMismatch(_)
        | Error::ShapeMismatch { .. }
        | Error::Parse(_)
        | Error::DisconnectedAtZeroNoise => INVALID_GRAPH,
        Error::ChecksumMismatch | Error::SchemaVersion { .. } => CORRUPT,
        Error::EmptySplit { .. } | Error::InsufficientSamples { .. } | Error::EmptyBlock(_) | Error::DegenerateDenominator => {
            PARTITION
        }
        Error::InvalidParam(_) | Error::TooManySpikes { .. } | Error::LengthMismatch(..) => USAGE,
        Error::Io(_) | Error::Json(_) => IO,
        _ => NUMERICAL,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_for(&e),
            name: e.name().into(),
            message: e.to_string(),
        }
    }
}
