//! Gaussian voting: mask pixels vote for the Gaussians they see, weighted by
//! visibility, and Gaussians with a large enough share of positive votes form
//! the selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{render_selection_mask, RenderError, WeightRecords};
use crate::scene::{Camera, GaussianScene, Mask, SceneError, Selection};

/// Gaussians whose accumulated visibility falls below this never get a vote share.
pub const MIN_VISIBILITY_MASS: f64 = 1e-8;

/// Default vote-share threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum VoteError {
    #[error("mask is {mask_w}x{mask_h} but weight records are {rec_w}x{rec_h}")]
    DimensionMismatch {
        mask_w: u32,
        mask_h: u32,
        rec_w: u32,
        rec_h: u32,
    },
    #[error("tally covers {tally} Gaussians but the scene has {scene}")]
    SizeMismatch { tally: usize, scene: usize },
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("no Gaussian cleared the vote threshold")]
    EmptySelection,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// How much a pixel's vote counts for one contributing Gaussian.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotePowerMode {
    /// The blend weight `α·T`.
    #[default]
    BlendWeight,
    /// The blend weight multiplied once more by the Gaussian's opacity.
    PaperLiteral,
}

impl VotePowerMode {
    pub fn power(self, weight: f64, opacity: f64) -> f64 {
        match self {
            VotePowerMode::BlendWeight => weight,
            VotePowerMode::PaperLiteral => opacity * weight,
        }
    }
}

impl std::str::FromStr for VotePowerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blend_weight" => Ok(Self::BlendWeight),
            "paper_literal" => Ok(Self::PaperLiteral),
            other => Err(format!("unknown vote mode `{other}`")),
        }
    }
}

impl std::fmt::Display for VotePowerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::BlendWeight => "blend_weight",
            Self::PaperLiteral => "paper_literal",
        })
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Per-Gaussian positive and total vote mass.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTally {
    positive: Vec<CompensatedSum>,
    total: Vec<CompensatedSum>,
    pub accepted_views: Vec<u32>,
}

impl VoteTally {
    pub fn new(len: usize) -> Self {
        Self {
            positive: vec![CompensatedSum::default(); len],
            total: vec![CompensatedSum::default(); len],
            accepted_views: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn positive_mass(&self) -> Vec<f64> {
        self.positive.iter().map(CompensatedSum::value).collect()
    }

    pub fn total_mass(&self) -> Vec<f64> {
        self.total.iter().map(CompensatedSum::value).collect()
    }

    /// Adds one view's votes. `opacities` is only read in [`VotePowerMode::PaperLiteral`].
    pub fn accumulate_view(
        &mut self,
        mask: &Mask,
        records: &WeightRecords,
        mode: VotePowerMode,
        opacities: &[f64],
    ) -> Result<(), VoteError> {
        if mask.width != records.width || mask.height != records.height {
            return Err(VoteError::DimensionMismatch {
                mask_w: mask.width,
                mask_h: mask.height,
                rec_w: records.width,
                rec_h: records.height,
            });
        }
        for rec in records.iter() {
            let inside = mask.get(rec.col, rec.row);
            for c in rec.contributions {
                let j = c.gaussian as usize;
                let opacity = opacities.get(j).copied().unwrap_or(1.0);
                let power = mode.power(c.weight, opacity);
                self.total[j].add(power);
                if inside {
                    self.positive[j].add(power);
                }
            }
        }
        self.accepted_views.push(mask.view_id);
        Ok(())
    }

    /// Sums two tallies over the same scene.
    pub fn merge(&mut self, other: &VoteTally) -> Result<(), VoteError> {
        if other.len() != self.len() {
            return Err(VoteError::SizeMismatch {
                tally: other.len(),
                scene: self.len(),
            });
        }
        for (a, b) in self.positive.iter_mut().zip(&other.positive) {
            a.merge(b);
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            a.merge(b);
        }
        self.accepted_views.extend_from_slice(&other.accepted_views);
        Ok(())
    }

    /// Vote share per Gaussian in `[0, 1]`.
    pub fn normalized_votes(&self) -> Vec<f64> {
        self.positive
            .iter()
            .zip(&self.total)
            .map(|(p, t)| normalized_vote(p.value(), t.value()))
            .collect()
    }
}

pub fn normalized_vote(positive: f64, total: f64) -> f64 {
    if total < MIN_VISIBILITY_MASS {
        0.0
    } else {
        (positive / total).clamp(0.0, 1.0)
    }
}

/// Indices whose vote share is strictly above `threshold`.
pub fn select_indices(votes: &[f64], threshold: f64) -> Result<Vec<u32>, VoteError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(VoteError::BadThreshold(threshold));
    }
    let picked: Vec<u32> = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > threshold)
        .map(|(i, _)| i as u32)
        .collect();
    if picked.is_empty() {
        Err(VoteError::EmptySelection)
    } else {
        Ok(picked)
    }
}

pub fn select_gaussians(scene: &GaussianScene, votes: &[f64], threshold: f64) -> Result<Selection, VoteError> {
    if votes.len() != scene.len() {
        return Err(VoteError::SizeMismatch {
            tally: votes.len(),
            scene: scene.len(),
        });
    }
    Ok(Selection::new(scene, select_indices(votes, threshold)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inspection {
    Accept,
    Reject,
}

/// Accepts a predicted mask when there is no running selection yet, or when it
/// overlaps the mask rendered from the running selection.
pub fn iim_inspect(
    predicted: &Mask,
    scene: &GaussianScene,
    running: Option<&Selection>,
    cam: &Camera,
    render_threshold: f64,
) -> Result<Inspection, VoteError> {
    let Some(selection) = running else {
        return Ok(Inspection::Accept);
    };
    let rendered = render_selection_mask(scene, selection, cam, render_threshold)?;
    Ok(if predicted.intersects(&rendered) {
        Inspection::Accept
    } else {
        Inspection::Reject
    })
}
