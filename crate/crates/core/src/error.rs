use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Identifies the block of the Gibbs sweep an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SweepStep {
    AugmentR,
    Dictionary,
    Assignment,
    Weights,
    Lambda,
    Eta,
    Theta,
    Diagonal,
    NoiseVariance,
    Hyperpriors,
}

impl fmt::Display for SweepStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SweepStep::AugmentR => "augment-R",
            SweepStep::Dictionary => "dictionary",
            SweepStep::Assignment => "assignment",
            SweepStep::Weights => "weights",
            SweepStep::Lambda => "lambda",
            SweepStep::Eta => "eta",
            SweepStep::Theta => "theta",
            SweepStep::Diagonal => "diagonal",
            SweepStep::NoiseVariance => "sigma2-e",
            SweepStep::Hyperpriors => "hyperpriors",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("vertex {0} has zero degree")]
    ZeroDegreeVertex(usize),
    #[error("input matrix is not symmetric (max deviation {0:e})")]
    AsymmetricInput(f64),
    #[error("adjacency has a negative weight at ({0}, {1})")]
    NegativeWeight(usize, usize),
    #[error("adjacency has a nonzero diagonal at vertex {0}")]
    NonZeroDiagonal(usize),
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("first eigenvector has a non-positive entry at {0}")]
    NonPositiveFirstEigenvector(usize),
    #[error("eigensolver failed to converge")]
    ConvergenceFailure,
    #[error("label {0} is not used by any vertex")]
    EmptyBlock(usize),
    #[error("normalized cut denominator is zero")]
    DegenerateDenominator,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("value {0} is outside the support")]
    OutOfSupport(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("positivity rejection exhausted after {0} attempts")]
    PositivityRejectionExhausted(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("too many spikes: T = {spikes} but n = {n} (need T <= n - 1)")]
    TooManySpikes { spikes: usize, n: usize },
    #[error("log density is not finite")]
    NonFiniteLogDensity,
    #[error("block {block} cannot be split: eigenvector {eigenvector} has one sign there")]
    EmptySplit { block: usize, eigenvector: usize },
    #[error("insufficient samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("labels have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("generated graph is disconnected at zero noise; add a cross-block floor weight")]
    DisconnectedAtZeroNoise,
    #[error("recovered adjacency is invalid: {0}")]
    RecoveredAdjacencyInvalid(String),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("sweep step {step} failed: {source}")]
    Step {
        step: SweepStep,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, step: SweepStep) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Stable identifier used for CLI exit-code mapping and log lines.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ZeroDegreeVertex(_) => "ZeroDegreeVertex",
            Error::AsymmetricInput(_) => "AsymmetricInput",
            Error::NegativeWeight(..) => "NegativeWeight",
            Error::NonZeroDiagonal(_) => "NonZeroDiagonal",
            Error::NotSquare(..) => "NotSquare",
            Error::DisconnectedGraph => "DisconnectedGraph",
            Error::NonPositiveFirstEigenvector(_) => "NonPositiveFirstEigenvector",
            Error::ConvergenceFailure => "ConvergenceFailure",
            Error::EmptyBlock(_) => "EmptyBlock",
            Error::DegenerateDenominator => "DegenerateDenominator",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::OutOfSupport(_) => "OutOfSupport",
            Error::InvalidParam(_) => "InvalidParam",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::PositivityRejectionExhausted(_) => "PositivityRejectionExhausted",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::TooManySpikes { .. } => "TooManySpikes",
            Error::NonFiniteLogDensity => "NonFiniteLogDensity",
            Error::EmptySplit { .. } => "EmptySplit",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::DisconnectedAtZeroNoise => "DisconnectedAtZeroNoise",
            Error::RecoveredAdjacencyInvalid(_) => "RecoveredAdjacencyInvalid",
            Error::ChecksumMismatch => "ChecksumMismatch",
            Error::SchemaVersion { .. } => "SchemaVersion",
            Error::Parse(_) => "Parse",
            Error::Step { source, .. } => source.name(),
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
