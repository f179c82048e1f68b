use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has zero norm; cosine distance is undefined")]
    ZeroNormRow { row: usize },

    #[error("k = {k} must be smaller than the number of points ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("point {point} has zero k-NN distance (at least k+1 coincident points)")]
    ZeroBandwidth { point: usize },

    #[error("row {row} of the affinity matrix sums to zero")]
    ZeroRowSum { row: usize },

    #[error("spectrum is identically zero")]
    ZeroSpectrum,

    #[error("stress became non-finite at iteration {iteration}")]
    NonFiniteStress { iteration: usize },

    #[error("non-finite value produced in layer `{layer}`")]
    NonFiniteLoss { layer: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} is absent from the training split of fold {fold}")]
    MissingClassInFold { class: usize, fold: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
