use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("coverage error: voxel {0:?} is not covered by any patch")]
    Coverage([usize; 3]),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical stability: alpha {alpha} is below the minimum {alpha_min}")]
    Stability { alpha: f64, alpha_min: f64 },

    #[error("ground-truth access error: {0}")]
    Access(String),

    #[error("pairing error: run lengths {0} and {1} differ")]
    Pairing(usize, usize),

    #[error("ICC undefined: {0}")]
    IccUndefined(String),

    #[error("training aborted at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("attack diverged at iteration {iteration}: loss rose for {streak} consecutive steps")]
    Divergence { iteration: usize, streak: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),

    #[error("session error: {0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
