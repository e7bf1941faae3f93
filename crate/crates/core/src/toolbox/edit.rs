//! Instruction-driven color editing: render a view, let a 2D editor produce
//! the target image, and step the selected DC colors down the L1 gradient.

use std::collections::HashMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ToolboxError;
use crate::image::ColorImage;
use crate::render::{render, RenderOptions, WeightRecords, FOREGROUND_MIN_WEIGHT};
use crate::scene::{Camera, GaussianScene, Mask, Selection, ViewSet};

/// A 2D image editor.
pub trait Editor: Send + Sync {
    fn edit(&self, camera: &Camera, image: &ColorImage, instruction: &str) -> Result<ColorImage, ToolboxError>;
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEditor;

impl Editor for IdentityEditor {
    fn edit(&self, _: &Camera, image: &ColorImage, _: &str) -> Result<ColorImage, ToolboxError> {
        Ok(image.clone())
    }
}

/// Blends every pixel toward a color: `(1 - strength) * in + strength * color`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TintEditor {
    pub color: [f64; 3],
    pub strength: f64,
}

impl TintEditor {
    pub fn new(color: [f64; 3]) -> Self {
        Self { color, strength: 0.5 }
    }
}

impl Editor for TintEditor {
    fn edit(&self, _: &Camera, image: &ColorImage, _: &str) -> Result<ColorImage, ToolboxError> {
        let s = self.strength;
        let mut out = image.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v = (1.0 - s) * *v + s * self.color[i % 3];
        }
        Ok(out)
    }
}

/// Raises every channel to a power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEditor {
    pub gamma: f64,
}

impl Editor for GammaEditor {
    fn edit(&self, _: &Camera, image: &ColorImage, _: &str) -> Result<ColorImage, ToolboxError> {
        let mut out = image.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0).powf(self.gamma));
        Ok(out)
    }
}

/// Paints a flat color inside a per-view mask; views without a mask pass through.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecolorEditor {
    pub masks: HashMap<u32, Mask>,
    pub color: [f64; 3],
}

impl Editor for RegionRecolorEditor {
    fn edit(&self, camera: &Camera, image: &ColorImage, _: &str) -> Result<ColorImage, ToolboxError> {
        let mut out = image.clone();
        if let Some(mask) = self.masks.get(&camera.id) {
            if mask.width != image.width || mask.height != image.height {
                return Err(ToolboxError::BadRequest(format!("mask for view {} has the wrong size", camera.id)));
            }
            for y in 0..image.height {
                for x in 0..image.width {
                    if mask.get(x, y) {
                        out.set_pixel(x, y, self.color);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct EditRequestBody<'a> {
    image_png: String,
    instruction: &'a str,
}

#[derive(Deserialize)]
struct EditResponseBody {
    image_png: String,
}

/// Client for a `POST /edit` image-editing server.
#[derive(Debug, Clone)]
pub struct RemoteEditor {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteEditor {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("HTTP client without TLS builds"),
        }
    }
}

impl Editor for RemoteEditor {
    fn edit(&self, camera: &Camera, image: &ColorImage, instruction: &str) -> Result<ColorImage, ToolboxError> {
        let url = format!("{}/edit", self.endpoint);
        let unavailable = |e: String| ToolboxError::EditorUnavailable(format!("{url}: {e}"));
        let resp = self
            .client
            .post(&url)
            .json(&EditRequestBody {
                image_png: B64.encode(image.to_png_bytes()),
                instruction,
            })
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: EditResponseBody = resp.json().map_err(|e| unavailable(e.to_string()))?;
        let bytes = B64.decode(body.image_png.as_bytes()).map_err(|e| unavailable(e.to_string()))?;
        let out = ColorImage::from_png_bytes(&bytes).map_err(|e| unavailable(e.to_string()))?;
        if out.width != camera.width || out.height != camera.height {
            return Err(unavailable(format!(
                "edited image is {}x{}, view is {}x{}",
                out.width, out.height, camera.width, camera.height
            )));
        }
        Ok(out)
    }
}

/// Builds an editor from `builtin:identity`, `builtin:tint-red|green|blue`,
/// `builtin:gamma:<g>` or `remote:<url>`.
pub fn build_editor(spec: &str) -> Result<Box<dyn Editor>, ToolboxError> {
    let unknown = || ToolboxError::EditorUnavailable(format!("unknown editor `{spec}`"));
    if let Some(url) = spec.strip_prefix("remote:") {
        if url.is_empty() {
            return Err(unknown());
        }
        return Ok(Box::new(RemoteEditor::new(url)));
    }
    let name = spec.strip_prefix("builtin:").ok_or_else(unknown)?;
    Ok(match name {
        "identity" => Box::new(IdentityEditor),
        "tint-red" => Box::new(TintEditor::new([1.0, 0.0, 0.0])),
        "tint-green" => Box::new(TintEditor::new([0.0, 1.0, 0.0])),
        "tint-blue" => Box::new(TintEditor::new([0.0, 0.0, 1.0])),
        other => match other.strip_prefix("gamma:").and_then(|g| g.parse::<f64>().ok()) {
            Some(gamma) if gamma > 0.0 && gamma.is_finite() => Box::new(GammaEditor { gamma }),
            _ => return Err(unknown()),
        },
    })
}

/// Gradient of the summed per-pixel L1 loss with respect to each selected DC color.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGradient {
    pub indices: Vec<u32>,
    pub gradients: Vec<Vector3<f64>>,
}

impl ColorGradient {
    /// Since the composited color is linear in each Gaussian's color with the
    /// blend weight as coefficient, `dL/dc_j = sum_px sign(I - I_e) * w_px,j`.
    pub fn compute(
        records: &WeightRecords,
        rendered: &ColorImage,
        edited: &ColorImage,
        selection: &Selection,
        scene_len: usize,
    ) -> Self {
        let mut slot = vec![usize::MAX; scene_len];
        for (k, &i) in selection.indices().iter().enumerate() {
            slot[i as usize] = k;
        }
        let mut gradients = vec![Vector3::zeros(); selection.len()];
        for rec in records.iter() {
            let i = rendered.index(rec.col, rec.row);
            let sign = Vector3::from_fn(|c, _| sign(rendered.data[i + c] - edited.data[i + c]));
            if sign == Vector3::zeros() {
                continue;
            }
            for c in rec.contributions {
                let k = slot[c.gaussian as usize];
                if k != usize::MAX {
                    gradients[k] += sign * c.weight;
                }
            }
        }
        Self {
            indices: selection.indices().to_vec(),
            gradients,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Summed L1 over all pixels and channels.
pub fn l1_sum(a: &ColorImage, b: &ColorImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone)]
pub struct EditStep {
    pub scene: GaussianScene,
    pub selection: Selection,
    /// Mean absolute difference over the whole image.
    pub loss: f64,
    /// Mean absolute difference over pixels the selection is visible in.
    pub region_loss: f64,
}

/// One gradient step on the selected DC colors against the editor's output for `camera`.
#[allow(clippy::too_many_arguments)]
pub fn semantic_edit_step(
    scene: &GaussianScene,
    selection: &Selection,
    camera: &Camera,
    editor: &dyn Editor,
    instruction: &str,
    step_size: f64,
    background: [f64; 3],
) -> Result<EditStep, ToolboxError> {
    selection.check(scene)?;
    let view = render(scene, camera, &RenderOptions::with_background(background).recording());
    let records = view.weights.expect("weights were requested");
    let edited = editor.edit(camera, &view.color, instruction)?;
    if edited.width != view.color.width || edited.height != view.color.height {
        return Err(ToolboxError::EditorUnavailable("editor changed the image size".into()));
    }
    let loss = view.color.mean_abs_diff(&edited);
    let region_loss = region_l1(&records, &view.color, &edited, &selection.membership(scene.len()));
    let grad = ColorGradient::compute(&records, &view.color, &edited, selection, scene.len());
    let mut gaussians = scene.gaussians().to_vec();
    for (&i, g) in grad.indices.iter().zip(&grad.gradients) {
        let c = &mut gaussians[i as usize].color;
        *c = (*c - g * step_size).map(|v| v.clamp(0.0, 1.0));
    }
    let scene = GaussianScene::with_degree(gaussians, scene.labels().map(<[u32]>::to_vec), scene.sh_degree())?;
    let selection = Selection::new(&scene, selection.indices().iter().copied())?;
    Ok(EditStep {
        scene,
        selection,
        loss,
        region_loss,
    })
}

fn region_l1(records: &WeightRecords, a: &ColorImage, b: &ColorImage, selected: &[bool]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for rec in records.iter() {
        let w: f64 = rec
            .contributions
            .iter()
            .filter(|c| selected[c.gaussian as usize])
            .map(|c| c.weight)
            .sum();
        if w >= FOREGROUND_MIN_WEIGHT {
            let i = a.index(rec.col, rec.row);
            sum += (0..3).map(|c| (a.data[i + c] - b.data[i + c]).abs()).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub instruction: String,
    pub steps: usize,
    pub step_size: f64,
    /// Linear decay of the step size to zero over the run.
    pub annealing: bool,
    pub seed: u64,
    pub background: [f64; 3],
}

impl EditRequest {
    pub fn validate(&self) -> Result<(), ToolboxError> {
        if self.steps == 0 {
            return Err(ToolboxError::BadRequest("steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(ToolboxError::BadRequest("step_size must be positive".into()));
        }
        Ok(())
    }

    pub fn step_size_at(&self, step: usize) -> f64 {
        if self.annealing {
            self.step_size * (1.0 - step as f64 / self.steps as f64)
        } else {
            self.step_size
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub scene: GaussianScene,
    pub selection: Selection,
    pub loss_trace: Vec<f64>,
    pub region_loss_trace: Vec<f64>,
    pub sampled_views: Vec<u32>,
}

/// Runs `request.steps` edit steps on uniformly sampled views.
///
/// `progress` is called after every step with the 1-based step and its loss.
pub fn semantic_edit(
    scene: &GaussianScene,
    selection: &Selection,
    views: &ViewSet,
    editor: &dyn Editor,
    request: &EditRequest,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<EditOutcome, ToolboxError> {
    request.validate()?;
    selection.check(scene)?;
    if views.is_empty() {
        return Err(ToolboxError::BadRequest("no views to edit from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut current = scene.clone();
    let mut sel = selection.clone();
    let mut outcome = EditOutcome {
        scene: scene.clone(),
        selection: selection.clone(),
        loss_trace: Vec::with_capacity(request.steps),
        region_loss_trace: Vec::with_capacity(request.steps),
        sampled_views: Vec::with_capacity(request.steps),
    };
    for s in 1..=request.steps {
        let cam = &views.cameras()[rng.random_range(0..views.len())];
        let step = semantic_edit_step(
            &current,
            &sel,
            cam,
            editor,
            &request.instruction,
            request.step_size_at(s),
            request.background,
        )?;
        outcome.loss_trace.push(step.loss);
        outcome.region_loss_trace.push(step.region_loss);
        outcome.sampled_views.push(cam.id);
        progress(s, step.loss);
        current = step.scene;
        sel = step.selection;
    }
    outcome.scene = current;
    outcome.selection = sel;
    Ok(outcome)
}
