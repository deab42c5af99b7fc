use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("pressure solve did not converge after {iterations} iterations (residual {residual:.3e} kg/s)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("network Jacobian is singular")]
    SingularJacobian,
    #[error("CFD inner solve did not reach tolerance after {0} iterations")]
    InnerNonConvergence(usize),
    #[error("CFD/multizone coupling diverged at iteration {iteration} (mismatch {mismatch:.3e} kg/s)")]
    CouplingDiverged { iteration: usize, mismatch: f64 },
    #[error("ill-conditioned matrix (condition estimate {0:.3e})")]
    IllConditioned(f64),
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),
    #[error("time {0} min outside the reconstruction range")]
    OutOfRange(f64),
    #[error("no detection event")]
    NoDetection,
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: String, hint: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
