//! The two perception roles the pipeline depends on: a promptable 2D
//! segmenter and a dense feature extractor.
//!
//! Oracle implementations read ground truth from a labeled scene; remote
//! implementations talk JSON over HTTP to a model server.

mod oracle;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epipolar::FeatureMap;
use crate::image::ColorImage;
use crate::scene::{Camera, Click, GaussianScene, Mask, Polarity};

pub use oracle::{box_downsample, OracleFeatures, OracleSegmenter, ORACLE_FEATURE_DIM};
pub use remote::{RemoteFeatures, RemoteSegmenter};

/// Default patch edge, in downsampled pixels, of one oracle feature cell.
pub const DEFAULT_PATCH: u32 = 4;

/// Image downsampling applied before feature extraction.
pub const FEATURE_DOWNSAMPLE: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum PerceptionError {
    #[error("remote service unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote service returned a malformed response: {0}")]
    RemoteProtocol(String),
    #[error("no positive click for this view")]
    NoPositiveClick,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("oracle perception needs a labeled scene")]
    MissingLabels,
    #[error("image is empty")]
    EmptyImage,
    #[error("bad handle `{0}`: expected `oracle` or `remote:<url>`")]
    BadHandle(String),
}

/// What a perception model sees of one view.
#[derive(Debug, Clone, Copy)]
pub struct ViewInput<'a> {
    pub camera: &'a Camera,
    pub image: &'a ColorImage,
}

pub trait Segmenter: Send + Sync {
    /// Mask prompted by the positive and negative clicks of one view.
    fn segment(&self, view: &ViewInput<'_>, clicks: &[Click]) -> Result<Mask, PerceptionError>;
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, view: &ViewInput<'_>) -> Result<FeatureMap, PerceptionError>;
}

impl<T: Segmenter + ?Sized> Segmenter for Arc<T> {
    fn segment(&self, view: &ViewInput<'_>, clicks: &[Click]) -> Result<Mask, PerceptionError> {
        (**self).segment(view, clicks)
    }
}

impl<T: FeatureExtractor + ?Sized> FeatureExtractor for Arc<T> {
    fn extract(&self, view: &ViewInput<'_>) -> Result<FeatureMap, PerceptionError> {
        (**self).extract(view)
    }
}

pub(crate) fn require_positive(clicks: &[Click]) -> Result<(), PerceptionError> {
    if clicks.iter().any(|c| c.polarity == Polarity::Positive) {
        Ok(())
    } else {
        Err(PerceptionError::NoPositiveClick)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SegmenterHandle {
    Oracle,
    Remote { endpoint: String },
}

impl SegmenterHandle {
    pub fn build(&self, scene: &Arc<GaussianScene>) -> Result<Arc<dyn Segmenter>, PerceptionError> {
        Ok(match self {
            SegmenterHandle::Oracle => Arc::new(OracleSegmenter::new(scene.clone())?),
            SegmenterHandle::Remote { endpoint } => Arc::new(RemoteSegmenter::new(endpoint)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FeatureExtractorHandle {
    Oracle { patch: u32 },
    Remote { endpoint: String },
}

impl FeatureExtractorHandle {
    pub fn build(&self) -> Result<Arc<dyn FeatureExtractor>, PerceptionError> {
        Ok(match self {
            FeatureExtractorHandle::Oracle { patch } => Arc::new(OracleFeatures::new(*patch)),
            FeatureExtractorHandle::Remote { endpoint } => Arc::new(RemoteFeatures::new(endpoint)),
        })
    }
}

impl Default for SegmenterHandle {
    fn default() -> Self {
        Self::Oracle
    }
}

impl Default for FeatureExtractorHandle {
    fn default() -> Self {
        Self::Oracle { patch: DEFAULT_PATCH }
    }
}

fn parse_remote(s: &str) -> Option<String> {
    s.strip_prefix("remote:")
        .filter(|u| !u.is_empty())
        .map(|u| u.trim_end_matches('/').to_string())
}

impl std::str::FromStr for SegmenterHandle {
    type Err = PerceptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "oracle" {
            return Ok(Self::Oracle);
        }
        parse_remote(s)
            .map(|endpoint| Self::Remote { endpoint })
            .ok_or_else(|| PerceptionError::BadHandle(s.to_string()))
    }
}

/// `oracle`, `oracle:<patch>` or `remote:<url>`.
impl std::str::FromStr for FeatureExtractorHandle {
    type Err = PerceptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "oracle" {
            return Ok(Self::default());
        }
        if let Some(patch) = s.strip_prefix("oracle:") {
            return match patch.parse::<u32>() {
                Ok(p) if p >= 1 => Ok(Self::Oracle { patch: p }),
                _ => Err(PerceptionError::BadHandle(s.to_string())),
            };
        }
        parse_remote(s)
            .map(|endpoint| Self::Remote { endpoint })
            .ok_or_else(|| PerceptionError::BadHandle(s.to_string()))
    }
}

impl From<SegmenterHandle> for String {
    fn from(h: SegmenterHandle) -> String {
        match h {
            SegmenterHandle::Oracle => "oracle".into(),
            SegmenterHandle::Remote { endpoint } => format!("remote:{endpoint}"),
        }
    }
}

impl From<FeatureExtractorHandle> for String {
    fn from(h: FeatureExtractorHandle) -> String {
        match h {
            FeatureExtractorHandle::Oracle { patch } => format!("oracle:{patch}"),
            FeatureExtractorHandle::Remote { endpoint } => format!("remote:{endpoint}"),
        }
    }
}

impl TryFrom<String> for SegmenterHandle {
    type Error = PerceptionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl TryFrom<String> for FeatureExtractorHandle {
    type Error = PerceptionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
