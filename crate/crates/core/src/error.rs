use thiserror::Error;

/// Errors raised by the simulator, detector and mitigation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or scenario field failed validation.
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("nodes {a} and {b} are co-located")]
    CoLocated { a: usize, b: usize },

    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("no usable channel: every effective gain is zero")]
    NoUsableChannel,

    #[error("routing cycle through node {0}")]
    RoutingCycle(usize),

    #[error("sink {0} is unreachable from every node")]
    SinkUnreachable(usize),

    /// Every grid point received zero posterior mass.
    #[error("model inconsistency: observed events have zero likelihood on the whole grid")]
    ModelInconsistency,

    #[error("degenerate BER samples: {0}")]
    DegenerateSamples(String),

    #[error("invalid secure code: {0}")]
    InvalidCode(String),

    #[error("symbol count mismatch: expected {expected}, got {got}")]
    SymbolCount { expected: usize, got: usize },

    /// Decoding was attempted without the full set of encoded symbols.
    #[error("insufficient symbols: {observed} of {dimension} observed, 256^{nullity} candidate messages remain")]
    InsufficientSymbols {
        observed: usize,
        dimension: usize,
        nullity: usize,
    },

    #[error("matrix is singular over GF(256)")]
    Singular,

    #[error("scenario generation failed after {0} attempts")]
    GenerationExhausted(usize),

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("no jammed traces available")]
    NoJammedTraces,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidField { .. } | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
