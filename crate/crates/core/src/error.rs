use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),

    #[error("odometry chain broken: no measurement from pose {0} to pose {1}")]
    ChainBroken(usize, usize),

    #[error("anisotropic covariance rejected: {0}")]
    Anisotropic(String),

    #[error("invalid association assignment: {0}")]
    InvalidAssignment(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("extraction failed: {0}")]
    ExtractionFailed(String),

    #[error("enumeration would visit {branches} branches, above the cap of {cap}")]
    BranchCapExceeded { branches: u128, cap: u128 },

    #[error("insufficient data: {found} samples, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },

    #[error("time window [{t0}, {t1}] outside the log range [{start}, {end}]")]
    OutOfRange {
        t0: f64,
        t1: f64,
        start: f64,
        end: f64,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("association domains differ")]
    DomainMismatch,

    #[error("semidefinite solver: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed log: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
