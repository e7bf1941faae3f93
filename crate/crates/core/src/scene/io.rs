use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, Click, Mask, SceneError, Selection, ViewSet};

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CamerasDoc {
    cameras: Vec<CameraRecord>,
}

#[derive(Serialize, Deserialize)]
struct ClicksDoc {
    clicks: Vec<Click>,
}

fn read(path: &Path) -> Result<Vec<u8>, SceneError> {
    std::fs::read(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    std::fs::write(path, bytes).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl From<CameraRecord> for Camera {
    fn from(r: CameraRecord) -> Self {
        Camera {
            id: r.id,
            width: r.width,
            height: r.height,
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            rotation: Matrix3::from_row_slice(&r.r),
            translation: Vector3::from_row_slice(&r.t),
        }
    }
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = c.rotation[(row, col)];
            }
        }
        CameraRecord {
            id: c.id,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl ViewSet {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let doc: CamerasDoc = serde_json::from_str(text)?;
        ViewSet::new(doc.cameras.into_iter().map(Camera::from).collect())
    }

    pub fn to_json(&self) -> String {
        let doc = CamerasDoc {
            cameras: self.cameras().iter().map(CameraRecord::from).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("cameras serialize")
    }
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<ViewSet, SceneError> {
    let bytes = read(path.as_ref())?;
    ViewSet::from_json(&String::from_utf8_lossy(&bytes))
}

pub fn save_cameras(views: &ViewSet, path: impl AsRef<Path>) -> Result<(), SceneError> {
    write(path.as_ref(), views.to_json().as_bytes())
}

pub fn load_clicks(path: impl AsRef<Path>) -> Result<Vec<Click>, SceneError> {
    let doc: ClicksDoc = serde_json::from_slice(&read(path.as_ref())?)?;
    Ok(doc.clicks)
}

/// Writes clicks including their `source` tag.
pub fn save_clicks(clicks: &[Click], path: impl AsRef<Path>) -> Result<(), SceneError> {
    let doc = ClicksDoc {
        clicks: clicks.to_vec(),
    };
    write(path.as_ref(), serde_json::to_string_pretty(&doc)?.as_bytes())
}

pub fn load_selection(path: impl AsRef<Path>) -> Result<Selection, SceneError> {
    #[derive(Deserialize)]
    struct Doc {
        scene_hash: String,
        indices: Vec<u32>,
    }
    let doc: Doc = serde_json::from_slice(&read(path.as_ref())?)?;
    Selection::from_parts(doc.scene_hash, doc.indices)
}

pub fn save_selection(selection: &Selection, path: impl AsRef<Path>) -> Result<(), SceneError> {
    write(path.as_ref(), serde_json::to_string(selection)?.as_bytes())
}

pub fn mask_to_png_bytes(mask: &Mask) -> Vec<u8> {
    let img = GrayImage::from_fn(mask.width, mask.height, |x, y| Luma([if mask.get(x, y) { 255 } else { 0 }]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encode");
    out.into_inner()
}

/// Decodes an 8-bit mask PNG; values above 127 are inside.
pub fn mask_from_png_bytes(view_id: u32, bytes: &[u8]) -> Result<Mask, SceneError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| SceneError::Image(e.to_string()))?
        .to_luma8();
    Ok(Mask::from_fn(view_id, img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] > 127))
}

pub fn save_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<(), SceneError> {
    write(path.as_ref(), &mask_to_png_bytes(mask))
}

pub fn load_mask_png(view_id: u32, path: impl AsRef<Path>) -> Result<Mask, SceneError> {
    mask_from_png_bytes(view_id, &read(path.as_ref())?)
}
