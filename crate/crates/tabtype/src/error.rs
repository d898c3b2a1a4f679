//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// Normalization violations are deliberately *not* errors: `pfsm::validate`
/// reports them as data so callers can inspect broken machines.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem while building or loading a machine.
    #[error("invalid machine: {0}")]
    InvalidMachine(String),

    /// A free parameter was NaN or infinite when probabilities were
    /// re-materialized.
    #[error("invalid free parameter")]
    InvalidFreeParameter,

    /// A test oracle was asked to exceed its size limits.
    #[error("oracle limit: {0}")]
    OracleLimit(String),

    /// The regex pattern uses a construct outside the supported subset.
    #[error("unsupported regex feature: {0}")]
    UnsupportedRegex(String),

    /// The regex pattern is malformed.
    #[error("regex parse error at position {position}: {message}")]
    RegexParse { position: usize, message: String },

    /// Inference was asked to type a column with no rows.
    #[error("empty column {0:?}")]
    EmptyColumn(String),

    /// The missing-value machine was extended with a code it already has.
    #[error("duplicate missing code {0:?}")]
    DuplicateMissingCode(String),

    /// A training label does not name a regular type in the catalog.
    #[error("unknown type label {0:?}")]
    UnknownLabel(String),

    /// A numeric intermediate became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Invalid argument or configuration.
    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
