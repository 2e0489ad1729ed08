use thiserror::Error;

use crate::container::ContainerError;
use crate::ply::PlyError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion has zero norm")]
    InvalidRotation,
    #[error("unsupported SH degree {0} (expected 0..=3)")]
    UnsupportedDegree(u32),
    #[error("cannot truncate SH degree {from} to {to}")]
    InvalidTruncation { from: u32, to: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("at least one view is required")]
    NoViews,
    #[error("empty member set")]
    EmptyMembers,
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("camera rig: {0}")]
    Rig(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
