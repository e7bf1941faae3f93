//! Synthetic benchmark: labeled scene generation, metrics, and a grid runner
//! over pipeline settings.

mod metrics;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{OracleFeatures, OracleSegmenter, PerceptionError, Segmenter, ViewInput, DEFAULT_PATCH};
use crate::pipeline::{segment, SegmentConfig, SegmentError, SegmentOutcome};
use crate::render::{render_object_map, render_selection_mask};
use crate::scene::{subsample_views, Click, GaussianScene, Mask, SceneError, BACKGROUND_LABEL};
use crate::voting::{VotePowerMode, DEFAULT_THRESHOLD};

pub use metrics::{iou, miou_macc, pixel_accuracy};
pub use synth::{chebyshev, generate_scene, region_click, SceneSpec, SyntheticScene, CLUTTER_GRAY, MIN_COLOR_DISTANCE, PALETTE};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scene spec is infeasible: {0}")]
    SpecInfeasible(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("no scene specs given")]
    NoSpecs,
}

/// Chebyshev dilation of a mask by `radius` pixels.
pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let r = radius as i64;
    let horizontal: Vec<bool> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| ((x - r).max(0)..=(x + r).min(w - 1)).any(|xx| mask.bits[(y * w + xx) as usize]))
        .collect();
    let bits = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| ((y - r).max(0)..=(y + r).min(h - 1)).any(|yy| horizontal[(yy * w + x) as usize]))
        .collect();
    Mask { bits, ..mask.clone() }
}

/// Replaces the masks of chosen views with the region of a different object,
/// as a mismatched click would produce. The region keeps a margin from the true
/// mask; when no other object is visible the complement of the grown true mask
/// is used instead.
pub struct CorruptingSegmenter<S> {
    pub inner: S,
    pub scene: Arc<GaussianScene>,
    pub corrupted: HashSet<u32>,
    pub margin: u32,
}

impl<S: Segmenter> Segmenter for CorruptingSegmenter<S> {
    fn segment(&self, view: &ViewInput<'_>, clicks: &[Click]) -> Result<Mask, PerceptionError> {
        let mask = self.inner.segment(view, clicks)?;
        if !self.corrupted.contains(&view.camera.id) || mask.is_empty() {
            return Ok(mask);
        }
        let keep_out = dilate(&mask, self.margin);
        let map = render_object_map(&self.scene, view.camera).map_err(|_| PerceptionError::MissingLabels)?;
        let inside: HashSet<u32> = (0..mask.bits.len())
            .filter(|&i| mask.bits[i])
            .map(|i| map.labels[i])
            .collect();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, &l) in map.labels.iter().enumerate() {
            if l != BACKGROUND_LABEL && !inside.contains(&l) && !keep_out.bits[i] {
                *counts.entry(l).or_default() += 1;
            }
        }
        let wrong = counts.into_iter().fold(None::<(u32, usize)>, |best, (l, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((l, n)),
        });
        Ok(match wrong {
            Some((label, _)) => Mask {
                bits: map
                    .labels
                    .iter()
                    .zip(&keep_out.bits)
                    .map(|(&l, &k)| l == label && !k)
                    .collect(),
                ..mask
            },
            None => keep_out.complement(),
        })
    }
}

/// Margin, in pixels, between a corrupted mask and the true object.
pub const CORRUPTION_MARGIN: u32 = 3;

/// Settings shared by every cell of a benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub threshold: f64,
    pub patch: u32,
    /// Standard deviation of additive noise on oracle descriptors.
    pub feature_noise: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            patch: DEFAULT_PATCH,
            feature_noise: 0.0,
        }
    }
}

/// One pipeline configuration of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub rate: f64,
    pub shuffle: bool,
    pub iim: bool,
    pub epipolar: bool,
    pub mode: VotePowerMode,
    pub corruption: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            rate: 1.0,
            shuffle: false,
            iim: true,
            epipolar: true,
            mode: VotePowerMode::BlendWeight,
            corruption: 0.0,
        }
    }
}

/// Cartesian grid of pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchGrid {
    pub rates: Vec<f64>,
    pub shuffle: Vec<bool>,
    pub iim: Vec<bool>,
    pub epipolar: Vec<bool>,
    pub modes: Vec<VotePowerMode>,
    pub corruption: Vec<f64>,
    #[serde(flatten)]
    pub settings: BenchSettings,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            rates: vec![1.0],
            shuffle: vec![false],
            iim: vec![true],
            epipolar: vec![true],
            modes: vec![VotePowerMode::BlendWeight],
            corruption: vec![0.0],
            settings: BenchSettings::default(),
        }
    }
}

impl BenchGrid {
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut out = Vec::new();
        for &rate in &self.rates {
            for &shuffle in &self.shuffle {
                for &iim in &self.iim {
                    for &epipolar in &self.epipolar {
                        for &mode in &self.modes {
                            for &corruption in &self.corruption {
                                out.push(CellConfig {
                                    rate,
                                    shuffle,
                                    iim,
                                    epipolar,
                                    mode,
                                    corruption,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scene_seed: u64,
    pub rate: f64,
    pub shuffle: bool,
    pub iim: bool,
    pub epipolar: bool,
    pub mode: VotePowerMode,
    pub corruption: f64,
    pub miou: f64,
    pub macc: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    /// Means of mIoU and mAcc over rows that did not fail.
    pub fn mean(&self) -> (f64, f64) {
        let ok: Vec<&BenchRow> = self.rows.iter().filter(|r| r.miou.is_finite()).collect();
        let n = ok.len().max(1) as f64;
        (
            ok.iter().map(|r| r.miou).sum::<f64>() / n,
            ok.iter().map(|r| r.macc).sum::<f64>() / n,
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Scores of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub miou: f64,
    pub macc: f64,
    pub wall_ms: f64,
    pub outcome: SegmentOutcome,
}

/// Views whose masks get corrupted: a seeded `fraction` of the processed views, never the clicked one.
pub fn corrupted_views(view_ids: &[u32], click_view: u32, fraction: f64, seed: u64) -> HashSet<u32> {
    if fraction <= 0.0 {
        return HashSet::new();
    }
    let mut candidates: Vec<u32> = view_ids.iter().copied().filter(|&v| v != click_view).collect();
    let count = ((fraction * view_ids.len() as f64).round() as usize).min(candidates.len());
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00));
    candidates.into_iter().take(count).collect()
}

/// Runs the pipeline for one cell and scores the selection on every view but the clicked one.
pub fn run_cell(synth: &SyntheticScene, cell: &CellConfig, settings: &BenchSettings) -> Result<CellResult, BenchError> {
    let start = Instant::now();
    let seed = synth.spec.seed;
    let views = subsample_views(&synth.views, cell.rate, cell.shuffle, seed)?;
    let scene = Arc::new(synth.scene.clone());
    let segmenter = CorruptingSegmenter {
        inner: OracleSegmenter::new(scene.clone()).expect("synthetic scenes are labeled"),
        scene: scene.clone(),
        corrupted: corrupted_views(&views.ids(), synth.click.view_id, cell.corruption, seed),
        margin: CORRUPTION_MARGIN,
    };
    let features = OracleFeatures::new(settings.patch).with_noise(settings.feature_noise, seed);
    let config = SegmentConfig {
        threshold: settings.threshold,
        mode: cell.mode,
        iim: cell.iim,
        epipolar: cell.epipolar,
        ..SegmentConfig::default()
    };
    let outcome = segment(&scene, &views, &[synth.click.clone()], &segmenter, &features, &config)?;
    let (miou, macc) = evaluate_selection(synth, &outcome.selection, synth.click.view_id)?;
    Ok(CellResult {
        miou,
        macc,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        outcome,
    })
}

/// mIoU and mAcc of the rendered selection against ground truth on every view except `exclude`.
pub fn evaluate_selection(
    synth: &SyntheticScene,
    selection: &crate::scene::Selection,
    exclude: u32,
) -> Result<(f64, f64), BenchError> {
    let pairs: Vec<(Mask, Mask)> = synth
        .views
        .cameras()
        .par_iter()
        .enumerate()
        .filter(|(_, cam)| cam.id != exclude)
        .map(|(i, cam)| {
            let pred = render_selection_mask(&synth.scene, selection, cam, crate::pipeline::DEFAULT_MASK_THRESHOLD)
                .map_err(|e| BenchError::DimensionMismatch(e.to_string()))?;
            Ok((pred, synth.gt_mask(i)))
        })
        .collect::<Result<_, BenchError>>()?;
    let (pred, gt): (Vec<Mask>, Vec<Mask>) = pairs.into_iter().unzip();
    miou_macc(&pred, &gt)
}

/// Every spec against every cell of the grid. Failed cells become NaN rows.
pub fn run_benchmark(specs: &[SceneSpec], grid: &BenchGrid) -> Result<BenchResult, BenchError> {
    if specs.is_empty() {
        return Err(BenchError::NoSpecs);
    }
    let scenes: Vec<SyntheticScene> = specs.iter().map(generate_scene).collect::<Result<_, _>>()?;
    let cells = grid.cells();
    let jobs: Vec<(&SyntheticScene, CellConfig)> = scenes
        .iter()
        .flat_map(|s| cells.iter().map(move |c| (s, *c)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(synth, cell)| {
            let start = Instant::now();
            let (miou, macc) = match run_cell(synth, cell, &grid.settings) {
                Ok(r) => (r.miou, r.macc),
                Err(_) => (f64::NAN, f64::NAN),
            };
            BenchRow {
                scene_seed: synth.spec.seed,
                rate: cell.rate,
                shuffle: cell.shuffle,
                iim: cell.iim,
                epipolar: cell.epipolar,
                mode: cell.mode,
                corruption: cell.corruption,
                miou,
                macc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect();
    Ok(BenchResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_grows_by_radius() {
        let mut m = Mask::empty(0, 7, 7);
        m.set(3, 3, true);
        let d = dilate(&m, 2);
        assert_eq!(d.count(), 25);
        assert!(d.get(1, 1) && d.get(5, 5) && !d.get(0, 3));
    }

    #[test]
    fn grid_arithmetic() {
        let grid = BenchGrid {
            rates: vec![1.0, 0.5, 0.25, 0.1],
            ..BenchGrid::default()
        };
        assert_eq!(grid.cells().len(), 4);
    }

    #[test]
    fn corruption_never_hits_click_view() {
        let ids: Vec<u32> = (0..20).collect();
        let picked = corrupted_views(&ids, 0, 0.3, 9);
        assert_eq!(picked.len(), 6);
        assert!(!picked.contains(&0));
        assert_eq!(picked, corrupted_views(&ids, 0, 0.3, 9));
    }
}
