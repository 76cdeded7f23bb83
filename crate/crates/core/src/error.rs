use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (skew part {skew:e} exceeds tolerance {tol:e})")]
    Asymmetric { skew: f64, tol: f64 },
    #[error("matrix dimension {0} exceeds the supported maximum of 64")]
    TooLarge(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("degenerate increment: x1 == x2")]
    DegenerateIncrement,
    #[error(
        "degenerate signature: slope bounds coincide ({0}); use the two sector inequalities instead"
    )]
    DegenerateSignature(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("region count {count} exceeds the cap of {cap}")]
    RegionExplosion { count: u128, cap: usize },
    #[error("model has open ports; terminate it first")]
    NotTerminated,
    #[error("model has no open ports")]
    NoPorts,
    #[error("storage matrix is singular at tolerance")]
    SingularStorage,
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("rate mismatch: {0} vs {1}")]
    RateMismatch(f64, f64),
    #[error("unsupported bridge: both sides carry signature {0}")]
    UnsupportedBridge(i8),
    #[error("bridge is not dissipative")]
    NotDissipative,
    #[error("ill-posed interconnection: {0}")]
    IllPosed(String),
    #[error("unsupported interconnection: {0}")]
    Unsupported(String),
    #[error("trajectory error: {0}")]
    Trajectory(String),
}

pub type Result<T> = std::result::Result<T, Error>;
