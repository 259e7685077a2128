use std::io;
use std::path::{Path, PathBuf};

use ambipose_core::eval::EvalError;
use ambipose_core::model::ModelError;
use ambipose_core::scenes::SceneError;
use ambipose_core::trainer::TrainError;
use ambipose_core::viz::VizError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", .path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("dimension mismatch: dataset manifest has obs_dim {manifest}, checkpoint expects obs_dim {checkpoint}")]
    DimensionMismatch { manifest: usize, checkpoint: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Viz(#[from] VizError),
}

impl Error {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Error {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::DimensionMismatch { .. } => 1,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 1,
            Error::Scene(SceneError::UnknownScene(_) | SceneError::Invalid(_) | SceneError::EmptySplit) => 1,
            Error::Train(TrainError::Config(_) | TrainError::EmptyDataset) => 1,
            Error::Eval(EvalError::Threshold(_) | EvalError::Empty) => 1,
            Error::Viz(VizError::NoBins(..) | VizError::Range(..) | VizError::CellSize) => 1,
            _ => 2,
        }
    }
}
