use thiserror::Error;

/// Errors raised by the calculators, the channel and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A feasibility inequality does not hold. The message names it.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("channel protocol violation: {0}")]
    Protocol(String),

    #[error("decode failure: {0}")]
    Decode(String),

    /// A runtime bound the scheme relies on was breached (e.g. |z| outside
    /// the quantizer range at a sampling instant).
    #[error("envelope breach: {0}")]
    EnvelopeBreach(String),

    #[error("state diverged at t = {t:.6} s: {detail}")]
    Divergence { t: f64, detail: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
