use std::collections::HashSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{require_positive, FeatureExtractor, PerceptionError, Segmenter, ViewInput, FEATURE_DOWNSAMPLE};
use crate::epipolar::FeatureMap;
use crate::image::ColorImage;
use crate::render::render_object_map;
use crate::scene::{Click, GaussianScene, Mask, Polarity, BACKGROUND_LABEL};

/// Mean RGB, RGB standard deviation, mean horizontal and vertical luminance gradient.
pub const ORACLE_FEATURE_DIM: usize = 8;

/// Segments by reading the ground-truth label map of a labeled scene.
///
/// The mask is the union of the label regions under the positive clicks minus
/// the label regions under the negative clicks. Clicks on background select nothing.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    scene: Arc<GaussianScene>,
}

impl OracleSegmenter {
    pub fn new(scene: Arc<GaussianScene>) -> Result<Self, PerceptionError> {
        if scene.labels().is_none() {
            return Err(PerceptionError::MissingLabels);
        }
        Ok(Self { scene })
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, view: &ViewInput<'_>, clicks: &[Click]) -> Result<Mask, PerceptionError> {
        require_positive(clicks)?;
        let labels = render_object_map(&self.scene, view.camera).map_err(|_| PerceptionError::MissingLabels)?;
        let label_at = |c: &Click| {
            let (x, y) = c.pixel();
            labels.get(x.min(labels.width - 1), y.min(labels.height - 1))
        };
        let negative: HashSet<u32> = clicks
            .iter()
            .filter(|c| c.polarity == Polarity::Negative)
            .map(label_at)
            .collect();
        let positive: HashSet<u32> = clicks
            .iter()
            .filter(|c| c.polarity == Polarity::Positive)
            .map(label_at)
            .filter(|l| *l != BACKGROUND_LABEL && !negative.contains(l))
            .collect();
        Ok(Mask {
            view_id: view.camera.id,
            width: labels.width,
            height: labels.height,
            bits: labels.labels.iter().map(|l| positive.contains(l)).collect(),
        })
    }
}

/// Hand-crafted descriptors on a patch grid of the 2×-downsampled image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFeatures {
    pub patch: u32,
    /// Standard deviation and seed of additive Gaussian noise on every descriptor.
    pub noise: Option<(f64, u64)>,
}

impl OracleFeatures {
    pub fn new(patch: u32) -> Self {
        Self {
            patch: patch.max(1),
            noise: None,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise = (sigma > 0.0).then_some((sigma, seed));
        self
    }

    pub fn stride(&self) -> u32 {
        self.patch * FEATURE_DOWNSAMPLE
    }

    pub fn describe(&self, view_id: u32, image: &ColorImage) -> Result<FeatureMap, PerceptionError> {
        let small = box_downsample(image);
        let p = self.patch;
        let (gw, gh) = (small.width / p, small.height / p);
        if gw == 0 || gh == 0 {
            return Err(PerceptionError::EmptyImage);
        }
        let luma = |x: u32, y: u32| {
            let [r, g, b] = small.pixel(x, y);
            0.299 * r + 0.587 * g + 0.114 * b
        };
        let mut data = Vec::with_capacity(gw as usize * gh as usize * ORACLE_FEATURE_DIM);
        let mut rng = self
            .noise
            .map(|(sigma, seed)| (Normal::new(0.0, sigma).expect("positive sigma"), view_rng(seed, view_id)));
        for gy in 0..gh {
            for gx in 0..gw {
                let (x0, y0) = (gx * p, gy * p);
                let n = (p * p) as f64;
                // shifted by the first pixel so constant cells give exactly zero spread
                let shift = small.pixel(x0, y0);
                let mut sum = [0.0f64; 3];
                let mut sq = [0.0f64; 3];
                let (mut gx_sum, mut gy_sum) = (0.0, 0.0);
                for y in y0..y0 + p {
                    for x in x0..x0 + p {
                        let px = small.pixel(x, y);
                        for c in 0..3 {
                            let v = px[c] - shift[c];
                            sum[c] += v;
                            sq[c] += v * v;
                        }
                        if x + 1 < x0 + p {
                            gx_sum += (luma(x + 1, y) - luma(x, y)).abs();
                        }
                        if y + 1 < y0 + p {
                            gy_sum += (luma(x, y + 1) - luma(x, y)).abs();
                        }
                    }
                }
                let mut mean = [0.0f64; 3];
                let mut var = [0.0f64; 3];
                for c in 0..3 {
                    mean[c] = shift[c] + sum[c] / n;
                    var[c] = ((sq[c] - sum[c] * sum[c] / n) / n).max(0.0);
                }
                let pairs = (p * (p - 1)).max(1) as f64;
                let mut d = [0.0f64; ORACLE_FEATURE_DIM];
                for c in 0..3 {
                    d[c] = mean[c] - 0.5;
                    d[3 + c] = var[c].sqrt();
                }
                d[6] = gx_sum / pairs;
                d[7] = gy_sum / pairs;
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    d.iter_mut().for_each(|v| *v /= norm);
                }
                if let Some((dist, rng)) = rng.as_mut() {
                    d.iter_mut().for_each(|v| *v += dist.sample(rng));
                }
                data.extend(d.iter().map(|v| *v as f32));
            }
        }
        Ok(FeatureMap {
            view_id,
            width: gw,
            height: gh,
            dim: ORACLE_FEATURE_DIM,
            stride: self.stride(),
            data,
        })
    }
}

fn view_rng(seed: u64, view_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (view_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl FeatureExtractor for OracleFeatures {
    fn extract(&self, view: &ViewInput<'_>) -> Result<FeatureMap, PerceptionError> {
        self.describe(view.camera.id, view.image)
    }
}

/// 2×2 box average; a trailing odd row or column is dropped.
pub fn box_downsample(image: &ColorImage) -> ColorImage {
    ColorImage::from_fn(image.width / 2, image.height / 2, |x, y| {
        let mut out = [0.0; 3];
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let p = image.pixel(2 * x + dx, 2 * y + dy);
            for c in 0..3 {
                out[c] += 0.25 * p[c];
            }
        }
        out
    })
}
