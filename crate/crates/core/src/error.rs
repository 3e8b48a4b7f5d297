use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("query token {row} has no attendable key under the mask")]
    FullyMaskedRow { row: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dense mask of {entries} entries exceeds the guard of {limit}")]
    MaskTooLarge { entries: usize, limit: usize },

    #[error("layer index {layer} out of range for a {num_layers}-layer stack")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("plan rejected: {0}")]
    PlanRejected(Box<crate::probing::PlanValidation>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
