//! CPU splat rasterizer.
//!
//! Gaussians are projected with a first-order perspective Jacobian, sorted
//! front-to-back by camera depth once per view, and composited per pixel:
//!
//! ```text
//! C = Σ c_i α_i Π_{j<i} (1 - α_j) + T_final · background
//! ```
//!
//! When requested, every pixel keeps its ordered `(gaussian, α, weight)`
//! list. Those records are what voting, label maps, selection masks and the
//! color gradient of the edit loop consume.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::image::ColorImage;
use crate::scene::{Camera, Gaussian, GaussianScene, Mask, SceneError, Selection, BACKGROUND_LABEL};

/// Centers at or closer than this camera depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space low-pass filter added to the covariance diagonal (px²).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Pixels with less accumulated weight than this are background.
pub const FOREGROUND_MIN_WEIGHT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene carries no labels")]
    MissingLabels,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub gaussian_index: u32,
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the low-pass term.
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub screen_bbox: PixelRect,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl ProjectedGaussian {
    /// Opacity-scaled density at a pixel center, before clamping and skipping.
    #[inline]
    pub fn raw_alpha(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let power = -0.5 * (self.conic[(0, 0)] * dx * dx + 2.0 * self.conic[(0, 1)] * dx * dy + self.conic[(1, 1)] * dy * dy);
        self.opacity * power.exp()
    }
}

/// Jacobian of the pixel projection with respect to the world position.
pub fn projection_jacobian(cam: &Camera, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    j * cam.rotation
}

/// Projects one Gaussian; `None` means culled.
///
/// The screen rectangle bounds the ellipse where the opacity-scaled density
/// reaches the 1/255 skip threshold, so no contributing pixel lies outside it.
pub fn project_gaussian(g: &Gaussian, index: u32, cam: &Camera, sh_degree: u8) -> Option<ProjectedGaussian> {
    let p_cam = cam.to_camera(&g.position);
    if p_cam.z <= NEAR_PLANE {
        return None;
    }
    let reach = 255.0 * g.opacity;
    if reach <= 1.0 {
        return None;
    }
    let j = projection_jacobian(cam, &p_cam);
    let cov2d = j * g.covariance() * j.transpose() + Matrix2::identity() * LOW_PASS;
    let conic = cov2d.try_inverse()?;
    let mean2d = Vector2::new(cam.fx * p_cam.x / p_cam.z + cam.cx, cam.fy * p_cam.y / p_cam.z + cam.cy);

    // dᵀ Σ⁻¹ d ≤ q  ⇒  |dx| ≤ sqrt(q Σxx), |dy| ≤ sqrt(q Σyy)
    let q = 2.0 * reach.ln();
    let rx = (q * cov2d[(0, 0)]).sqrt() + 1e-6;
    let ry = (q * cov2d[(1, 1)]).sqrt() + 1e-6;
    // pixel c covers the center c + 0.5
    let x0 = (mean2d.x - rx - 0.5).ceil().max(0.0);
    let x1 = (mean2d.x + rx - 0.5).floor().min(cam.width as f64 - 1.0);
    let y0 = (mean2d.y - ry - 0.5).ceil().max(0.0);
    let y1 = (mean2d.y + ry - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let dir = (g.position - cam.center()).normalize();
    Some(ProjectedGaussian {
        gaussian_index: index,
        mean2d,
        cov2d,
        conic,
        depth: p_cam.z,
        screen_bbox: PixelRect {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        },
        opacity: g.opacity,
        color: view_color(g, &dir, sh_degree),
    })
}

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// DC color plus higher SH bands along `dir`, clamped at zero.
pub fn view_color(g: &Gaussian, dir: &Vector3<f64>, sh_degree: u8) -> Vector3<f64> {
    let mut c = g.color;
    let sh = &g.sh_rest;
    if sh_degree >= 1 {
        let (x, y, z) = (dir.x, dir.y, dir.z);
        c += -SH_C1 * y * sh[0] + SH_C1 * z * sh[1] - SH_C1 * x * sh[2];
        if sh_degree >= 2 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            c += SH_C2[0] * x * y * sh[3]
                + SH_C2[1] * y * z * sh[4]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[5]
                + SH_C2[3] * x * z * sh[6]
                + SH_C2[4] * (xx - yy) * sh[7];
            if sh_degree >= 3 {
                c += SH_C3[0] * y * (3.0 * xx - yy) * sh[8]
                    + SH_C3[1] * x * y * z * sh[9]
                    + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[10]
                    + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[11]
                    + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[12]
                    + SH_C3[5] * z * (xx - yy) * sh[13]
                    + SH_C3[6] * x * (xx - 3.0 * yy) * sh[14];
            }
        }
        c = c.map(|v| v.max(0.0));
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    pub alpha: f64,
    pub weight: f64,
}

/// Ordered contributions of one pixel.
#[derive(Debug, Clone, Copy)]
pub struct BlendRecord<'a> {
    pub row: u32,
    pub col: u32,
    pub contributions: &'a [Contribution],
    pub transmittance: f64,
}

impl BlendRecord<'_> {
    pub fn total_weight(&self) -> f64 {
        self.contributions.iter().map(|c| c.weight).sum()
    }
}

/// Per-pixel blend records of one view, stored contiguously.
#[derive(Debug, Clone)]
pub struct WeightRecords {
    pub width: u32,
    pub height: u32,
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
    transmittance: Vec<f64>,
}

impl WeightRecords {
    pub fn pixel(&self, col: u32, row: u32) -> BlendRecord<'_> {
        let i = row as usize * self.width as usize + col as usize;
        BlendRecord {
            row,
            col,
            contributions: &self.entries[self.offsets[i]..self.offsets[i + 1]],
            transmittance: self.transmittance[i],
        }
    }

    /// Row-major iteration over all pixels.
    pub fn iter(&self) -> impl Iterator<Item = BlendRecord<'_>> + '_ {
        let w = self.width;
        (0..self.width as usize * self.height as usize).map(move |i| BlendRecord {
            row: i as u32 / w,
            col: i as u32 % w,
            contributions: &self.entries[self.offsets[i]..self.offsets[i + 1]],
            transmittance: self.transmittance[i],
        })
    }

    pub fn contribution_count(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub record_weights: bool,
    pub depth: bool,
    /// Stop compositing a pixel once its transmittance drops below [`TRANSMITTANCE_STOP`].
    pub early_stop: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            record_weights: false,
            depth: false,
            early_stop: true,
        }
    }
}

impl RenderOptions {
    pub fn with_background(background: [f64; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_weights = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub view_id: u32,
    pub color: ColorImage,
    pub weights: Option<WeightRecords>,
    /// Weight-averaged camera depth; infinite where nothing was hit.
    pub depth: Option<Vec<f64>>,
}

/// Projects and depth-sorts every visible Gaussian (ties by index).
pub fn project_scene(scene: &GaussianScene, cam: &Camera) -> Vec<ProjectedGaussian> {
    let mut projected: Vec<ProjectedGaussian> = scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i as u32, cam, scene.sh_degree()))
        .collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.gaussian_index.cmp(&b.gaussian_index)));
    projected
}

struct RowOutput {
    color: Vec<f64>,
    counts: Vec<usize>,
    entries: Vec<Contribution>,
    transmittance: Vec<f64>,
    depth: Vec<f64>,
}

pub fn render(scene: &GaussianScene, cam: &Camera, options: &RenderOptions) -> RenderedView {
    let projected = project_scene(scene, cam);
    let (w, h) = (cam.width as usize, cam.height as usize);

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (k, p) in projected.iter().enumerate() {
        for y in p.screen_bbox.y0..=p.screen_bbox.y1 {
            rows[y as usize].push(k as u32);
        }
    }

    let outputs: Vec<RowOutput> = rows
        .par_iter()
        .enumerate()
        .map(|(y, list)| {
            let mut out = RowOutput {
                color: Vec::with_capacity(w * 3),
                counts: Vec::with_capacity(w),
                entries: Vec::new(),
                transmittance: Vec::with_capacity(w),
                depth: Vec::new(),
            };
            let py = y as f64 + 0.5;
            for x in 0..w {
                let px = x as f64 + 0.5;
                let mut t = 1.0;
                let mut rgb = Vector3::zeros();
                let mut depth_acc = 0.0;
                let mut weight_acc = 0.0;
                let mut count = 0;
                for &k in list {
                    let p = &projected[k as usize];
                    if (x as u32) < p.screen_bbox.x0 || (x as u32) > p.screen_bbox.x1 {
                        continue;
                    }
                    let alpha = p.raw_alpha(px, py).min(ALPHA_MAX);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    let weight = alpha * t;
                    rgb += p.color * weight;
                    if options.depth {
                        depth_acc += weight * p.depth;
                        weight_acc += weight;
                    }
                    if options.record_weights {
                        out.entries.push(Contribution {
                            gaussian: p.gaussian_index,
                            alpha,
                            weight,
                        });
                        count += 1;
                    }
                    t *= 1.0 - alpha;
                    if options.early_stop && t < TRANSMITTANCE_STOP {
                        break;
                    }
                }
                rgb += Vector3::from(options.background) * t;
                out.color.extend_from_slice(rgb.as_slice());
                out.counts.push(count);
                out.transmittance.push(t);
                if options.depth {
                    out.depth.push(if weight_acc > 0.0 { depth_acc / weight_acc } else { f64::INFINITY });
                }
            }
            out
        })
        .collect();

    let mut color = Vec::with_capacity(w * h * 3);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::new();
    let mut transmittance = Vec::with_capacity(w * h);
    let mut depth = Vec::new();
    offsets.push(0);
    for row in outputs {
        color.extend(row.color);
        for c in row.counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        entries.extend(row.entries);
        transmittance.extend(row.transmittance);
        depth.extend(row.depth);
    }
    RenderedView {
        view_id: cam.id,
        color: ColorImage {
            width: cam.width,
            height: cam.height,
            data: color,
        },
        weights: options.record_weights.then(|| WeightRecords {
            width: cam.width,
            height: cam.height,
            offsets,
            entries,
            transmittance,
        }),
        depth: options.depth.then_some(depth),
    }
}

/// Renders with weight records and returns them.
pub fn render_weights(scene: &GaussianScene, cam: &Camera) -> WeightRecords {
    render(scene, cam, &RenderOptions::default().recording())
        .weights
        .expect("weights were requested")
}

/// Per-pixel object labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn mask_of(&self, label: u32) -> Mask {
        Mask {
            view_id: self.view_id,
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|l| *l == label).collect(),
        }
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

/// Label of the heaviest contributor per pixel; ties go to the smaller index.
pub fn label_map_from_records(records: &WeightRecords, labels: &[u32], view_id: u32) -> LabelMap {
    let labels = records
        .iter()
        .map(|rec| {
            if rec.total_weight() < FOREGROUND_MIN_WEIGHT {
                return BACKGROUND_LABEL;
            }
            let best = rec.contributions.iter().fold(None::<&Contribution>, |best, c| match best {
                Some(b) if b.weight > c.weight || (b.weight == c.weight && b.gaussian < c.gaussian) => Some(b),
                _ => Some(c),
            });
            best.map_or(BACKGROUND_LABEL, |c| labels[c.gaussian as usize])
        })
        .collect();
    LabelMap {
        view_id,
        width: records.width,
        height: records.height,
        labels,
    }
}

pub fn render_label_map(scene: &GaussianScene, cam: &Camera) -> Result<LabelMap, RenderError> {
    let labels = scene.labels().ok_or(RenderError::MissingLabels)?;
    Ok(label_map_from_records(&render_weights(scene, cam), labels, cam.id))
}

/// Label with the largest summed weight per pixel; ties go to the smaller label.
///
/// Unlike [`label_map_from_records`], a pixel covered by many faint Gaussians of
/// one object belongs to that object even if a single Gaussian of another
/// object is the heaviest contributor.
pub fn object_map_from_records(records: &WeightRecords, labels: &[u32], view_id: u32) -> LabelMap {
    let mut sums: Vec<(u32, f64)> = Vec::new();
    let labels = records
        .iter()
        .map(|rec| {
            if rec.total_weight() < FOREGROUND_MIN_WEIGHT {
                return BACKGROUND_LABEL;
            }
            sums.clear();
            for c in rec.contributions {
                let l = labels[c.gaussian as usize];
                match sums.iter_mut().find(|(k, _)| *k == l) {
                    Some((_, w)) => *w += c.weight,
                    None => sums.push((l, c.weight)),
                }
            }
            sums.iter()
                .fold(None::<(u32, f64)>, |best, &(l, w)| match best {
                    Some((bl, bw)) if bw > w || (bw == w && bl < l) => Some((bl, bw)),
                    _ => Some((l, w)),
                })
                .map_or(BACKGROUND_LABEL, |(l, _)| l)
        })
        .collect();
    LabelMap {
        view_id,
        width: records.width,
        height: records.height,
        labels,
    }
}

pub fn render_object_map(scene: &GaussianScene, cam: &Camera) -> Result<LabelMap, RenderError> {
    let labels = scene.labels().ok_or(RenderError::MissingLabels)?;
    Ok(object_map_from_records(&render_weights(scene, cam), labels, cam.id))
}

/// A pixel is set when the selected share of its weight reaches `threshold`
/// and the pixel is foreground at all.
pub fn selection_mask_from_records(records: &WeightRecords, selected: &[bool], threshold: f64, view_id: u32) -> Mask {
    let bits = records
        .iter()
        .map(|rec| {
            let (total, chosen) = rec.contributions.iter().fold((0.0, 0.0), |(t, s), c| {
                let s = if selected[c.gaussian as usize] { s + c.weight } else { s };
                (t + c.weight, s)
            });
            total >= FOREGROUND_MIN_WEIGHT && chosen >= threshold * total
        })
        .collect();
    Mask {
        view_id,
        width: records.width,
        height: records.height,
        bits,
    }
}

pub fn render_selection_mask(
    scene: &GaussianScene,
    selection: &Selection,
    cam: &Camera,
    threshold: f64,
) -> Result<Mask, RenderError> {
    selection.check(scene)?;
    let records = render_weights(scene, cam);
    Ok(selection_mask_from_records(
        &records,
        &selection.membership(scene.len()),
        threshold,
        cam.id,
    ))
}
