//! Manipulation of a selected subset of a scene.
//!
//! Every operation is a pure function from a scene to a new scene and leaves
//! unselected Gaussians bit-identical.

mod edit;
mod ops;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{sh_rest_len, Gaussian, GaussianScene, SceneError, Selection};

pub use edit::{
    build_editor, l1_sum, semantic_edit, semantic_edit_step, ColorGradient, EditOutcome, EditRequest, Editor, EditStep,
    GammaEditor, IdentityEditor, RegionRecolorEditor, RemoteEditor, TintEditor,
};
pub use ops::{apply_op, OpDescriptor, OpOutcome};

#[derive(Debug, Error)]
pub enum ToolboxError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("scale factor must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("removing the selection would leave an empty scene")]
    WouldEmptyScene,
    #[error("target color {0:?} outside [0, 1]")]
    BadColor([f64; 3]),
    #[error("bad placement: {0}")]
    BadPlacement(String),
    #[error("editor unavailable: {0}")]
    EditorUnavailable(String),
    #[error("bad edit request: {0}")]
    BadRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorizeMode {
    /// Every selected color becomes the target.
    #[default]
    Replace,
    /// Shift all selected colors by one offset so their mean becomes the target.
    Balanced,
}

/// Similarity transform applied about the selection centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementTransform {
    pub translation: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub uniform_scale: f64,
}

impl Default for PlacementTransform {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            uniform_scale: 1.0,
        }
    }
}

impl PlacementTransform {
    pub fn validate(&self) -> Result<UnitQuaternion<f64>, ToolboxError> {
        if !(self.uniform_scale > 0.0 && self.uniform_scale.is_finite()) {
            return Err(ToolboxError::BadPlacement(format!(
                "uniform_scale must be positive, got {}",
                self.uniform_scale
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(ToolboxError::BadPlacement("non-finite translation".into()));
        }
        let [w, x, y, z] = self.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !q.norm().is_finite() || (q.norm() - 1.0).abs() > 1e-6 {
            return Err(ToolboxError::BadPlacement("rotation must be a unit quaternion".into()));
        }
        Ok(UnitQuaternion::from_quaternion(q))
    }

    /// Transforms `gaussians` about their common centroid.
    fn apply(&self, gaussians: &[Gaussian]) -> Result<Vec<Gaussian>, ToolboxError> {
        let rot = self.validate()?;
        let t = Vector3::from(self.translation);
        let s = self.uniform_scale;
        let c = centroid(gaussians.iter().map(|g| &g.position));
        Ok(gaussians
            .iter()
            .map(|g| Gaussian {
                position: c + t + rot * (g.position - c) * s,
                scale: g.scale * s,
                rotation: rot * g.rotation,
                ..g.clone()
            })
            .collect())
    }
}

fn centroid<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Vector3<f64> {
    let (sum, n) = points.fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
    if n == 0 {
        sum
    } else {
        sum / n as f64
    }
}

fn rebuild(scene: &GaussianScene, gaussians: Vec<Gaussian>) -> Result<GaussianScene, ToolboxError> {
    Ok(GaussianScene::with_degree(
        gaussians,
        scene.labels().map(<[u32]>::to_vec),
        scene.sh_degree(),
    )?)
}

pub fn colorize(
    scene: &GaussianScene,
    selection: &Selection,
    target: [f64; 3],
    mode: ColorizeMode,
) -> Result<GaussianScene, ToolboxError> {
    selection.check(scene)?;
    if !target.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(ToolboxError::BadColor(target));
    }
    let target = Vector3::from(target);
    let mut gaussians = scene.gaussians().to_vec();
    let idx = selection.indices();
    match mode {
        ColorizeMode::Replace => {
            for &i in idx {
                gaussians[i as usize].color = target;
            }
        }
        ColorizeMode::Balanced => {
            let mean = centroid(idx.iter().map(|&i| &gaussians[i as usize].color));
            let offset = target - mean;
            for &i in idx {
                gaussians[i as usize].color += offset;
            }
        }
    }
    rebuild(scene, gaussians)
}

/// Scales the selection by `epsilon` about its centroid, both positions and extents.
pub fn scale_selection(scene: &GaussianScene, selection: &Selection, epsilon: f64) -> Result<GaussianScene, ToolboxError> {
    selection.check(scene)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ToolboxError::NonPositiveEpsilon(epsilon));
    }
    let mut gaussians = scene.gaussians().to_vec();
    let idx = selection.indices();
    let center = centroid(idx.iter().map(|&i| &gaussians[i as usize].position));
    for &i in idx {
        let g = &mut gaussians[i as usize];
        g.scale *= epsilon;
        g.position = (g.position - center) * epsilon + center;
    }
    rebuild(scene, gaussians)
}

/// Appends transformed copies of the selection; returns the new scene and a
/// selection of the copies.
pub fn copy_paste(
    scene: &GaussianScene,
    selection: &Selection,
    placement: &PlacementTransform,
) -> Result<(GaussianScene, Selection), ToolboxError> {
    selection.check(scene)?;
    let picked: Vec<Gaussian> = selection
        .indices()
        .iter()
        .map(|&i| scene.gaussians()[i as usize].clone())
        .collect();
    let copies = placement.apply(&picked)?;
    let n = scene.len() as u32;
    let mut gaussians = scene.gaussians().to_vec();
    gaussians.extend(copies);
    let labels = scene.labels().map(|l| {
        let mut out = l.to_vec();
        out.extend(selection.indices().iter().map(|&i| l[i as usize]));
        out
    });
    let new_scene = GaussianScene::with_degree(gaussians, labels, scene.sh_degree())?;
    let copies = Selection::new(&new_scene, n..n + selection.len() as u32)?;
    Ok((new_scene, copies))
}

/// Pads with zeros or truncates SH bands to `degree`.
fn with_sh_degree(mut g: Gaussian, degree: u8) -> Gaussian {
    g.sh_rest.resize(sh_rest_len(degree), Vector3::zeros());
    g
}

/// Inserts the transformed source selection into `target`.
///
/// Inserted Gaussians take the target's SH degree (the source's when the
/// target is empty). Labels survive only when both scenes carry them.
pub fn combine(
    target: &GaussianScene,
    source: &GaussianScene,
    source_selection: &Selection,
    placement: &PlacementTransform,
) -> Result<GaussianScene, ToolboxError> {
    source_selection.check(source)?;
    let picked: Vec<Gaussian> = source_selection
        .indices()
        .iter()
        .map(|&i| source.gaussians()[i as usize].clone())
        .collect();
    let moved = placement.apply(&picked)?;
    let degree = if target.is_empty() {
        source.sh_degree()
    } else {
        target.sh_degree()
    };
    let mut gaussians = target.gaussians().to_vec();
    gaussians.extend(moved.into_iter().map(|g| with_sh_degree(g, degree)));
    let source_labels = source
        .labels()
        .map(|l| source_selection.indices().iter().map(|&i| l[i as usize]).collect::<Vec<_>>());
    let labels = match (target.labels(), source_labels) {
        (Some(t), Some(s)) => Some(t.iter().copied().chain(s).collect()),
        (None, Some(s)) if target.is_empty() => Some(s),
        _ => None,
    };
    Ok(GaussianScene::with_degree(gaussians, labels, degree)?)
}

/// Deletes the selection. `remap[old]` is the new index of a kept Gaussian.
pub fn remove_selection(
    scene: &GaussianScene,
    selection: &Selection,
) -> Result<(GaussianScene, Vec<Option<u32>>), ToolboxError> {
    selection.check(scene)?;
    if selection.len() == scene.len() {
        return Err(ToolboxError::WouldEmptyScene);
    }
    let removed = selection.membership(scene.len());
    let mut remap = Vec::with_capacity(scene.len());
    let mut gaussians = Vec::with_capacity(scene.len() - selection.len());
    let mut labels = scene.labels().map(|_| Vec::with_capacity(scene.len() - selection.len()));
    for (i, g) in scene.gaussians().iter().enumerate() {
        if removed[i] {
            remap.push(None);
            continue;
        }
        remap.push(Some(gaussians.len() as u32));
        gaussians.push(g.clone());
        if let (Some(out), Some(l)) = (labels.as_mut(), scene.labels()) {
            out.push(l[i]);
        }
    }
    Ok((GaussianScene::with_degree(gaussians, labels, scene.sh_degree())?, remap))
}
