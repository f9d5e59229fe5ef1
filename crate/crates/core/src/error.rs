use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite gradient encountered in parameter update")]
    NonFiniteGradient,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("state outside the invariant's domain: {0}")]
    Domain(String),

    #[error("sampling is infeasible: {0}")]
    Infeasible(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate calibration fit: {0}")]
    DegenerateFit(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
