//! End-to-end planner built on a state-space (Mamba-2) core: tensor autodiff,
//! the SSD layer in three equivalent modes, fusion and decoder blocks, the
//! planning model, a PDM scorer, a synthetic scenario generator and a
//! complexity benchmark.

use std::path::PathBuf;

pub mod bench;
pub mod blocks;
pub mod model;
pub mod params;
pub mod pdms;
pub mod pipeline;
pub mod rng;
pub mod ssd;
pub mod synth;
pub mod tensor;
pub mod verify;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Ssd(#[from] ssd::SsdError),
    #[error(transparent)]
    Param(#[from] params::ParamError),
    #[error(transparent)]
    Container(#[from] tensor::container::ContainerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("scenario {id}: {msg}")]
    Scenario { id: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }
}
