//! Dataset generation, training, evaluation sweeps and reports for the
//! OFDM neural receiver lab. The `nrx` binary is a thin CLI over this crate.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod neural;
pub mod plot;
pub mod scenario;
pub mod train;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("checkpoint was written for a different model (hash {found}, expected {expected}); pass --force to load anyway")]
    HashMismatch { expected: String, found: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error(transparent)]
    Phy(#[from] nrx_core::phy::PhyError),
    #[error(transparent)]
    Rx(#[from] nrx_core::receivers::RxError),
    #[error(transparent)]
    Coding(#[from] nrx_core::coding::CodingError),
    #[error(transparent)]
    Nn(#[from] nrx_core::nn::NnError),
    #[error(transparent)]
    Tensor(#[from] nrx_core::tensor::TensorError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for problems the user can fix (bad config, missing files).
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Io { .. }
                | HarnessError::Format(_)
                | HarnessError::HashMismatch { .. }
        )
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
