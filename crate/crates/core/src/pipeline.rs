//! End-to-end click-to-selection pipeline.
//!
//! Clicks are propagated to every view, each view is segmented in 2D, and the
//! masks vote for Gaussians one view at a time. With inspection on, a mask
//! that does not overlap the running selection's rendered mask is dropped.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epipolar::{propagate_clicks, EpipolarError, FeatureMap, PropagationOptions};
use crate::image::ColorImage;
use crate::perception::{FeatureExtractor, PerceptionError, Segmenter, ViewInput};
use crate::render::{render, render_weights, selection_mask_from_records, RenderOptions};
use crate::scene::{Click, GaussianScene, Mask, Polarity, SceneError, Selection, ViewSet};
use crate::voting::{select_indices, VoteError, VotePowerMode, VoteTally, DEFAULT_THRESHOLD};

/// Share of a pixel's weight the selection must hold for the rendered selection mask.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub threshold: f64,
    pub mode: VotePowerMode,
    pub iim: bool,
    pub epipolar: bool,
    pub background: [f64; 3],
    pub mask_threshold: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            mode: VotePowerMode::BlendWeight,
            iim: true,
            epipolar: true,
            background: [0.0; 3],
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Features,
    Propagation,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedView {
    pub view_id: u32,
    pub stage: Stage,
    pub reason: String,
    /// The failure came from a remote perception service.
    pub remote: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub accepted_views: Vec<u32>,
    pub rejected_views: Vec<u32>,
    pub skipped_views: Vec<SkippedView>,
    pub config: SegmentConfig,
    pub timings_ms: BTreeMap<String, f64>,
}

impl SegmentReport {
    pub fn remote_failures(&self) -> impl Iterator<Item = &SkippedView> {
        self.skipped_views.iter().filter(|s| s.remote)
    }
}

#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub selection: Selection,
    /// Every non-empty predicted mask in processing order, accepted or not.
    pub masks: Vec<Mask>,
    /// User clicks followed by propagated clicks.
    pub clicks: Vec<Click>,
    pub votes: Vec<f64>,
    pub report: SegmentReport,
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("no clicks given")]
    NoClicks,
    #[error("scene is empty")]
    EmptyScene,
    #[error("click refers to view {0}, which is not in the view set")]
    UnknownView(u32),
    #[error(transparent)]
    InvalidClick(SceneError),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Vote(VoteError),
    #[error("no Gaussian cleared the vote threshold")]
    EmptySelection { report: Box<SegmentReport> },
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn perception_skip(view_id: u32, stage: Stage, err: &PerceptionError) -> SkippedView {
    SkippedView {
        view_id,
        stage,
        reason: err.to_string(),
        remote: matches!(
            err,
            PerceptionError::RemoteUnavailable(_) | PerceptionError::RemoteProtocol(_)
        ),
    }
}

pub fn segment(
    scene: &GaussianScene,
    views: &ViewSet,
    clicks: &[Click],
    segmenter: &dyn Segmenter,
    features: &dyn FeatureExtractor,
    config: &SegmentConfig,
) -> Result<SegmentOutcome, SegmentError> {
    let start = Instant::now();
    if clicks.is_empty() {
        return Err(SegmentError::NoClicks);
    }
    if scene.is_empty() {
        return Err(SegmentError::EmptyScene);
    }
    for c in clicks {
        let cam = views.get(c.view_id).ok_or(SegmentError::UnknownView(c.view_id))?;
        c.validate(cam).map_err(SegmentError::InvalidClick)?;
    }
    let mut timings = BTreeMap::new();
    let mut skipped = Vec::new();

    let t = Instant::now();
    let options = RenderOptions::with_background(config.background);
    let images: Vec<ColorImage> = views.cameras().par_iter().map(|cam| render(scene, cam, &options).color).collect();
    timings.insert("render_ms".to_string(), ms(t));

    let t = Instant::now();
    let all_clicks = if views.len() > 1 {
        let maps: Vec<Result<FeatureMap, PerceptionError>> = views
            .cameras()
            .par_iter()
            .zip(&images)
            .map(|(camera, image)| features.extract(&ViewInput { camera, image }))
            .collect();
        timings.insert("features_ms".to_string(), ms(t));
        let t = Instant::now();
        let propagated = propagate_with_failures(clicks, views, maps, config, scene, &mut skipped)?;
        timings.insert("propagate_ms".to_string(), ms(t));
        propagated
    } else {
        clicks.to_vec()
    };

    let t = Instant::now();
    let predicted: Vec<Option<Mask>> = views
        .cameras()
        .par_iter()
        .zip(&images)
        .map(|(camera, image)| {
            let view_clicks: Vec<Click> = all_clicks.iter().filter(|c| c.view_id == camera.id).cloned().collect();
            if !view_clicks.iter().any(|c| c.polarity == Polarity::Positive) {
                return Err(None);
            }
            segmenter
                .segment(&ViewInput { camera, image }, &view_clicks)
                .map_err(|e| Some(perception_skip(camera.id, Stage::Segmentation, &e)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .zip(views.cameras())
        .map(|(r, cam)| match r {
            Ok(mask) if !mask.matches_camera(cam) => {
                skipped.push(SkippedView {
                    view_id: cam.id,
                    stage: Stage::Segmentation,
                    reason: format!("mask is {}x{}, view is {}x{}", mask.width, mask.height, cam.width, cam.height),
                    remote: false,
                });
                None
            }
            Ok(mask) if mask.is_empty() => {
                skipped.push(SkippedView {
                    view_id: cam.id,
                    stage: Stage::Segmentation,
                    reason: "empty mask".to_string(),
                    remote: false,
                });
                None
            }
            Ok(mask) => Some(mask),
            Err(Some(skip)) => {
                skipped.push(skip);
                None
            }
            Err(None) => {
                if !skipped.iter().any(|s: &SkippedView| s.view_id == cam.id) {
                    skipped.push(SkippedView {
                        view_id: cam.id,
                        stage: Stage::Segmentation,
                        reason: "no positive click".to_string(),
                        remote: false,
                    });
                }
                None
            }
        })
        .collect();
    timings.insert("segment2d_ms".to_string(), ms(t));

    let t = Instant::now();
    let opacities: Vec<f64> = scene.gaussians().iter().map(|g| g.opacity).collect();
    let mut tally = VoteTally::new(scene.len());
    let mut running: Option<Vec<bool>> = None;
    let mut rejected = Vec::new();
    let mut masks = Vec::new();
    for (cam, mask) in views.cameras().iter().zip(predicted) {
        let Some(mask) = mask else { continue };
        let records = render_weights(scene, cam);
        if let (true, Some(selected)) = (config.iim, running.as_ref()) {
            let rendered = selection_mask_from_records(&records, selected, config.mask_threshold, cam.id);
            if !mask.intersects(&rendered) {
                rejected.push(cam.id);
                masks.push(mask);
                continue;
            }
        }
        tally
            .accumulate_view(&mask, &records, config.mode, &opacities)
            .map_err(SegmentError::Vote)?;
        if config.iim {
            running = select_indices(&tally.normalized_votes(), config.threshold)
                .ok()
                .map(|idx| membership(&idx, scene.len()));
        }
        masks.push(mask);
    }
    let votes = tally.normalized_votes();
    timings.insert("vote_ms".to_string(), ms(t));
    timings.insert("total_ms".to_string(), ms(start));

    skipped.sort_by_key(|s| views.position(s.view_id));
    let report = SegmentReport {
        accepted_views: tally.accepted_views.clone(),
        rejected_views: rejected,
        skipped_views: skipped,
        config: *config,
        timings_ms: timings,
    };
    let indices = match select_indices(&votes, config.threshold) {
        Ok(idx) => idx,
        Err(VoteError::EmptySelection) => {
            return Err(SegmentError::EmptySelection {
                report: Box::new(report),
            })
        }
        Err(e) => return Err(SegmentError::Vote(e)),
    };
    let selection = Selection::new(scene, indices).map_err(|e| SegmentError::Vote(e.into()))?;
    Ok(SegmentOutcome {
        selection,
        masks,
        clicks: all_clicks,
        votes,
        report,
    })
}

fn membership(indices: &[u32], len: usize) -> Vec<bool> {
    let mut flags = vec![false; len];
    for &i in indices {
        flags[i as usize] = true;
    }
    flags
}

/// Propagates over the views whose features were extracted; the rest are reported.
fn propagate_with_failures(
    clicks: &[Click],
    views: &ViewSet,
    maps: Vec<Result<FeatureMap, PerceptionError>>,
    config: &SegmentConfig,
    scene: &GaussianScene,
    skipped: &mut Vec<SkippedView>,
) -> Result<Vec<Click>, SegmentError> {
    let mut ok_cams = Vec::new();
    let mut ok_maps = Vec::new();
    for (cam, m) in views.cameras().iter().zip(maps) {
        match m {
            Ok(m) => {
                ok_cams.push(cam.clone());
                ok_maps.push(m);
            }
            Err(e) => skipped.push(perception_skip(cam.id, Stage::Features, &e)),
        }
    }
    let source_failed = clicks.iter().any(|c| !ok_cams.iter().any(|cam| cam.id == c.view_id));
    if source_failed || ok_cams.len() < 2 {
        return Ok(clicks.to_vec());
    }
    let ok_views = ViewSet::new(ok_cams).map_err(SegmentError::InvalidClick)?;
    let options = PropagationOptions {
        depth_scale: scene.bounding_sphere().1,
        epipolar: config.epipolar,
    };
    let result = propagate_clicks(clicks, &ok_views, &ok_maps, &options)?;
    for s in result.skipped {
        if !skipped.iter().any(|k| k.view_id == s.view_id && k.stage == Stage::Propagation) {
            skipped.push(SkippedView {
                view_id: s.view_id,
                stage: Stage::Propagation,
                reason: s.reason.to_string(),
                remote: false,
            });
        }
    }
    Ok(result.clicks)
}
