use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rope dimension must be a positive even integer, got {0}")]
    InvalidDim(usize),

    #[error("theta base must be finite and greater than 1, got {0}")]
    InvalidTheta(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("vector entry {index} is not finite")]
    NonFinite { index: usize },

    #[error("monte carlo estimation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("distance list is empty")]
    EmptyDistances,

    #[error("distances must be strictly increasing")]
    UnsortedDistances,

    #[error("candidate resolution list is empty")]
    NoCandidates,

    #[error("resolution {height}x{width} must have positive dimensions")]
    InvalidResolution { height: u32, width: u32 },

    #[error("failed to parse resolution {0:?}, expected HxW")]
    ParseResolution(String),

    #[error("{axis} size {size} is not divisible by patch size {patch}")]
    Indivisible {
        axis: &'static str,
        size: u32,
        patch: u32,
    },

    #[error("grid shape {rows}x{cols} must have positive dimensions")]
    InvalidGrid { rows: usize, cols: usize },

    #[error("invalid layout plan: {0}")]
    InvalidPlan(String),

    #[error("id-align assignment needs a thumbnail grid when the plan has a high-resolution grid")]
    MissingThumbnail,

    #[error("population has {actual} slots, layout has {expected}")]
    PopulationMismatch { expected: usize, actual: usize },

    #[error("invalid population spec {0:?}")]
    ParsePopulation(String),
}
