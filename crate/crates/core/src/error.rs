use thiserror::Error;

/// Errors produced by the misalignment toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("registration error must be non-negative, got {0}")]
    InvalidError(f64),

    #[error("class index {index} out of range 0..{count}")]
    ClassIndexOutOfRange { index: usize, count: usize },

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("point set is degenerate (coplanar or collinear); no 3-D hull exists")]
    DegenerateHull,

    #[error("hull vertex {0} has no adjacent vertices")]
    MalformedHull(usize),

    #[error("requested {requested} points but only {available} are available")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("distances must be positive, got d={d}, d_tilde={d_tilde}")]
    InvalidDistance { d: f64, d_tilde: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("no neighborhood produced a defined entropy")]
    NoValidNeighborhoods,

    #[error("measure weights must be positive and sum to 1 (sum = {0})")]
    BadMeasure(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("labels contain a single class; cannot fit a binary classifier")]
    DegenerateLabels,

    #[error("input has zero variance")]
    DegenerateVariance,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("scan produced no hits")]
    EmptyScan,

    #[error("no correspondences within the inlier threshold at initialization")]
    NoCorrespondences,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
