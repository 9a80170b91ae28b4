use std::io;

use thiserror::Error;

pub type Result<T, E = GamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GamError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible process: no length-{n} string contains motif {motif}")]
    InfeasibleProcess { motif: String, n: usize },

    #[error("cannot parse {what} {text:?}: {reason}")]
    Parse {
        what: &'static str,
        text: String,
        reason: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(
        "rejection sampling infeasible: acceptance rate {rate:.3e} over {probes} probes is below \
         the floor {floor:.1e}; use snis for Training-1 or dpg for Training-2"
    )]
    RejectionInfeasible { rate: f64, probes: usize, floor: f64 },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GamError {
    pub fn config(msg: impl Into<String>) -> Self {
        GamError::Config(msg.into())
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(self, GamError::Config(_) | GamError::Parse { .. })
    }
}
