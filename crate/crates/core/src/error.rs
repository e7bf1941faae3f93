use thiserror::Error;

use crate::bench::BenchError;
use crate::epipolar::EpipolarError;
use crate::perception::PerceptionError;
use crate::pipeline::SegmentError;
use crate::render::RenderError;
use crate::scene::SceneError;
use crate::toolbox::ToolboxError;
use crate::voting::VoteError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Toolbox(#[from] ToolboxError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl Error {
    /// Stable machine-readable kind, e.g. for error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Scene(SceneError::SelectionMismatch { .. }) => "SelectionMismatch",
            Error::Toolbox(ToolboxError::Scene(SceneError::SelectionMismatch { .. })) => "SelectionMismatch",
            Error::Scene(_) => "SceneError",
            Error::Render(_) => "RenderError",
            Error::Epipolar(_) => "EpipolarError",
            Error::Vote(VoteError::EmptySelection) | Error::Segment(SegmentError::EmptySelection { .. }) => {
                "EmptySelection"
            }
            Error::Vote(_) => "VoteError",
            Error::Perception(_) => "PerceptionError",
            Error::Segment(_) => "SegmentError",
            Error::Toolbox(_) => "ToolboxError",
            Error::Bench(_) => "BenchError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
