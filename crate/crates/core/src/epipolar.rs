//! Click propagation along epipolar lines.
//!
//! A click registers a world ray through its camera center. The ray projects
//! to a line in every other view, and the matching click in that view is the
//! feature cell on the line whose descriptor has the largest dot product with
//! the source descriptor.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::render::NEAR_PLANE;
use crate::scene::{Camera, Click, ClickSource, ViewSet};

/// Two projected ray samples closer than this (px) mean the ray collapses to the epipole.
pub const EPIPOLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum EpipolarError {
    #[error("intrinsics are not invertible")]
    SingularIntrinsics,
    #[error("ray projects to a single point (epipole collapse)")]
    DegenerateEpipole,
    #[error("no part of the ray lies in front of the target camera")]
    RayBehindCamera,
    #[error("epipolar line misses the image")]
    EmptySegment,
    #[error("no feature map for view {0}")]
    MissingFeatures(u32),
    #[error("source view {0} is not in the view set")]
    UnknownSourceView(u32),
}

/// World-space ray of a click.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    /// Camera center (the depth-0 sample).
    pub origin: Vector3<f64>,
    /// Unit vector from the depth-1 sample toward the camera center.
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Point at `distance` in front of the source camera.
    pub fn point_at(&self, distance: f64) -> Vector3<f64> {
        self.origin - self.direction * distance
    }

    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let v = p - self.origin;
        (v - self.direction * v.dot(&self.direction)).norm()
    }
}

pub fn register_ray(click: &Click, cam: &Camera) -> Result<Ray, EpipolarError> {
    let k_inv = cam.intrinsics().try_inverse().ok_or(EpipolarError::SingularIntrinsics)?;
    let r_inv = cam.rotation.transpose();
    let near = -(r_inv * cam.translation);
    let far = r_inv * (k_inv * Vector3::new(click.x, click.y, 1.0) - cam.translation);
    Ok(Ray {
        origin: near,
        direction: (near - far).normalize(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarLine {
    pub view_id: u32,
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
    /// Part of the line inside the image, ordered from `p1` toward `p2`.
    pub clipped_segment: Option<(Vector2<f64>, Vector2<f64>)>,
}

impl EpipolarLine {
    /// Perpendicular pixel distance from `q` to the infinite line.
    pub fn distance_to(&self, q: &Vector2<f64>) -> f64 {
        let d = self.p2 - self.p1;
        let v = q - self.p1;
        (d.x * v.y - d.y * v.x).abs() / d.norm()
    }
}

/// Projects the click ray into `target`.
///
/// Samples are taken at distances `0.1 s` and `10 s` along the ray (`s` is a
/// scene scale, usually the bounding-sphere radius) and moved into the
/// stretch of the ray that lies in front of the target camera when needed.
pub fn project_ray(ray: &Ray, target: &Camera, depth_scale: f64) -> Result<EpipolarLine, EpipolarError> {
    let s = if depth_scale > 0.0 { depth_scale } else { 1.0 };
    // target depth along the ray: a + b t
    let a = target.to_camera(&ray.origin).z;
    let b = (target.rotation * -ray.direction).z;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    if b > 0.0 {
        lo = lo.max((NEAR_PLANE - a) / b);
    } else if b < 0.0 {
        hi = hi.min((NEAR_PLANE - a) / b);
    } else if a <= NEAR_PLANE {
        return Err(EpipolarError::RayBehindCamera);
    }
    if hi <= lo {
        return Err(EpipolarError::RayBehindCamera);
    }
    let place = |t: f64, frac: f64| -> f64 {
        if t > lo && t < hi {
            t
        } else if hi.is_finite() {
            lo + frac * (hi - lo)
        } else {
            lo + t
        }
    };
    let t1 = place(0.1 * s, 0.25);
    let t2 = place(10.0 * s, 0.75);
    let project = |t: f64| {
        let c = target.to_camera(&ray.point_at(t));
        Vector2::new(target.fx * c.x / c.z + target.cx, target.fy * c.y / c.z + target.cy)
    };
    let (p1, p2) = (project(t1), project(t2));
    if (p2 - p1).norm() < EPIPOLE_TOLERANCE || !(p1.iter().chain(p2.iter()).all(|v| v.is_finite())) {
        return Err(EpipolarError::DegenerateEpipole);
    }
    Ok(EpipolarLine {
        view_id: target.id,
        p1,
        p2,
        clipped_segment: clip_line(p1, p2, target.width as f64, target.height as f64),
    })
}

/// Liang–Barsky clip of the infinite line through `p1`, `p2` to `[0, w] × [0, h]`.
pub fn clip_line(p1: Vector2<f64>, p2: Vector2<f64>, w: f64, h: f64) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = p2 - p1;
    let (mut u0, mut u1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (p, q) in [(-d.x, p1.x), (d.x, w - p1.x), (-d.y, p1.y), (d.y, h - p1.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                u0 = u0.max(r);
            } else {
                u1 = u1.min(r);
            }
        }
    }
    if u0 > u1 || !u0.is_finite() || !u1.is_finite() {
        return None;
    }
    Some((p1 + d * u0, p1 + d * u1))
}

/// Dense per-view descriptors on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    /// Image pixels per grid cell.
    pub stride: u32,
    /// Row-major `height × width × dim`.
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn feature(&self, col: u32, row: u32) -> &[f32] {
        let i = (row as usize * self.width as usize + col as usize) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Nearest cell for a pixel coordinate, clamped to the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> (u32, u32) {
        let s = self.stride as f64;
        let c = ((x / s).floor().max(0.0) as u32).min(self.width - 1);
        let r = ((y / s).floor().max(0.0) as u32).min(self.height - 1);
        (c, r)
    }

    /// Pixel center of a grid cell.
    pub fn cell_center(&self, col: u32, row: u32) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }
}

/// Every integer cell between two grid points, 8-connected, endpoints included.
pub fn bresenham(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cells = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        cells.push((x, y));
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    cells
}

/// Feature-grid cells along the clipped epipolar segment, ordered from `p1` toward `p2`.
pub fn rasterize_line(line: &EpipolarLine, features: &FeatureMap) -> Result<Vec<(u32, u32)>, EpipolarError> {
    let (a, b) = line.clipped_segment.ok_or(EpipolarError::EmptySegment)?;
    if features.width == 0 || features.height == 0 {
        return Err(EpipolarError::EmptySegment);
    }
    let (ca, ra) = features.cell_at(a.x, a.y);
    let (cb, rb) = features.cell_at(b.x, b.y);
    Ok(bresenham((ca as i64, ra as i64), (cb as i64, rb as i64))
        .into_iter()
        .map(|(c, r)| (c as u32, r as u32))
        .collect())
}

/// Dot-product affinity of the source descriptor against each sample.
pub fn affinities(source: &[f32], samples: &[(u32, u32)], features: &FeatureMap) -> Vec<f64> {
    samples
        .iter()
        .map(|&(c, r)| {
            features
                .feature(c, r)
                .iter()
                .zip(source)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        })
        .collect()
}

/// Index of the first maximum.
pub fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Pixel coordinates of the best-matching sample.
pub fn match_click(source: &[f32], samples: &[(u32, u32)], features: &FeatureMap) -> Option<(f64, f64)> {
    let best = first_argmax(&affinities(source, samples, features))?;
    let (c, r) = samples[best];
    Some(features.cell_center(c, r))
}

/// Every cell of the grid in row-major order; the search space without the epipolar constraint.
pub fn all_cells(features: &FeatureMap) -> Vec<(u32, u32)> {
    (0..features.height)
        .flat_map(|r| (0..features.width).map(move |c| (c, r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Scene scale used to place ray samples.
    pub depth_scale: f64,
    /// Restrict matching to the epipolar line; otherwise search the full grid.
    pub epipolar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPropagation {
    pub view_id: u32,
    pub source_click: usize,
    pub reason: EpipolarError,
}

#[derive(Debug, Clone, Default)]
pub struct Propagation {
    /// User clicks first, then propagated clicks grouped by target view in view-set order.
    pub clicks: Vec<Click>,
    pub skipped: Vec<SkippedPropagation>,
}

/// Transfers every user click to every other view of the set.
///
/// `features` is indexed like `views`. Per-view failures are collected in
/// `skipped` and never abort the batch.
pub fn propagate_clicks(
    clicks: &[Click],
    views: &ViewSet,
    features: &[FeatureMap],
    options: &PropagationOptions,
) -> Result<Propagation, EpipolarError> {
    let mut sources = Vec::with_capacity(clicks.len());
    for click in clicks {
        let at = views
            .position(click.view_id)
            .ok_or(EpipolarError::UnknownSourceView(click.view_id))?;
        let fmap = features.get(at).ok_or(EpipolarError::MissingFeatures(click.view_id))?;
        let (c, r) = fmap.cell_at(click.x, click.y);
        let ray = register_ray(click, &views.cameras()[at])?;
        sources.push((click, fmap.feature(c, r).to_vec(), ray));
    }

    let per_view: Vec<(Vec<Click>, Vec<SkippedPropagation>)> = views
        .cameras()
        .par_iter()
        .enumerate()
        .map(|(vi, target)| {
            let mut out = Vec::new();
            let mut skipped = Vec::new();
            for (si, (click, feature, ray)) in sources.iter().enumerate() {
                if click.view_id == target.id {
                    continue;
                }
                let result = features
                    .get(vi)
                    .ok_or(EpipolarError::MissingFeatures(target.id))
                    .and_then(|fmap| {
                        let samples = if options.epipolar {
                            let line = project_ray(ray, target, options.depth_scale)?;
                            rasterize_line(&line, fmap)?
                        } else {
                            all_cells(fmap)
                        };
                        match_click(feature, &samples, fmap).ok_or(EpipolarError::EmptySegment)
                    });
                match result {
                    Ok((x, y)) => out.push(Click {
                        view_id: target.id,
                        x,
                        y,
                        polarity: click.polarity,
                        source: ClickSource::Propagated,
                    }),
                    Err(reason) => skipped.push(SkippedPropagation {
                        view_id: target.id,
                        source_click: si,
                        reason,
                    }),
                }
            }
            (out, skipped)
        })
        .collect();

    let mut result = Propagation {
        clicks: clicks.to_vec(),
        skipped: Vec::new(),
    };
    for (c, s) in per_view {
        result.clicks.extend(c);
        result.skipped.extend(s);
    }
    Ok(result)
}
