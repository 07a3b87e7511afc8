use thiserror::Error;

use crate::crypto::Digest;
use crate::regions::RegionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} = {value} is outside its allowed range")]
    OutOfRange { field: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("malformed site encoding: {0}")]
    Decode(String),

    #[error("ledger has no selectable tips")]
    EmptyTipSet,

    #[error("site {0} is not in the ledger")]
    UnknownSite(Digest),

    #[error("site {0} is already in the ledger")]
    DuplicateSite(Digest),

    #[error("malformed site: {0}")]
    MalformedSite(String),

    #[error("region {0} does not exist")]
    UnknownRegion(RegionId),

    #[error("regions {from} and {to} are not neighbors")]
    NotNeighbors { from: RegionId, to: RegionId },

    #[error("ICV is not present in region {0}")]
    NotPresent(RegionId),

    #[error("cross-regional site {0} does not carry a valid RSU signature")]
    ForgedCrossSite(Digest),

    #[error("cubic leading coefficient is zero")]
    DegenerateCubic,

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown scenario `{name}`; available: {available}")]
    UnknownScenario { name: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}
