use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("grid resolution mismatch: {left} vs {right}")]
    ResolutionMismatch { left: usize, right: usize },
    #[error("density integral {0} is not positive")]
    NonPositiveIntegral(f64),
    #[error("cannot subtract {amount} from a density with minimum {min}")]
    OverSubtraction { amount: f64, min: f64 },
    #[error("inverse branch {branch} failed to converge for y = {y}")]
    RootFinding { branch: usize, y: f64 },
    #[error("renormalization factor {0} outside [0.5, 2]")]
    Renormalization(f64),
    #[error("Ulam column {column} sums to {sum}")]
    UlamColumn { column: usize, sum: f64 },
    #[error("cylinder partition exceeded {cap} elements")]
    PartitionExplosion { cap: usize },
    #[error("map is not enveloping within {0} iterates")]
    NotEnveloping(usize),
    #[error("escape loop did not terminate within {0} iterates")]
    EscapeCap(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parameter {0} is not covered by any probe half-neighborhood")]
    CoverFailure(f64),
    #[error("fit unavailable: only {0} usable points")]
    FitUnavailable(usize),
    #[error("certificate violation: {0}")]
    Certificate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
