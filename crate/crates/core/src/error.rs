use std::path::PathBuf;

use thiserror::Error;

use crate::dynamics::ParticleState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} lies outside the transport window [0, {t_f}]")]
    Domain { t: f64, t_f: f64 },

    #[error("unsupported trap family: {0}")]
    UnsupportedFamily(String),

    #[error("design infeasible: {0}")]
    Infeasible(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        /// Last accepted state, when the failing system is a single particle.
        last_good: Option<ParticleState>,
    },

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("equilibrium sampling failed: {0}")]
    Sampling(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("wave-packet propagation failed: {0}")]
    Propagation(String),

    #[error("eigenbasis too small: {0}")]
    Basis(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
