//! Scene domain types: Gaussians, cameras, clicks, masks and selections.
//!
//! A [`GaussianScene`] is an immutable value once built. Every constructor
//! validates the invariants of its parts and stamps the scene with a content
//! digest, which is what a [`Selection`] binds to.

mod io;
pub mod ply;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use io::{
    load_cameras, load_clicks, load_mask_png, load_selection, mask_from_png_bytes, mask_to_png_bytes,
    save_cameras, save_clicks, save_mask_png, save_selection,
};
pub use ply::{load_scene_ply, save_scene_ply};

/// Label carried by pixels and Gaussians that belong to no object.
pub const BACKGROUND_LABEL: u32 = u32::MAX;

/// Zeroth-order real spherical harmonic constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("PLY is missing vertex property `{0}`")]
    MissingProperty(String),
    #[error("non-finite attribute `{property}` at vertex {index}")]
    NonFiniteAttribute { index: usize, property: String },
    #[error("truncated PLY body: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("scene is empty")]
    EmptyScene,
    #[error("invalid Gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("labels cover {labels} Gaussians but the scene has {gaussians}")]
    LabelCount { labels: usize, gaussians: usize },
    #[error("camera {id}: rotation is not orthonormal with det +1")]
    NonOrthonormalRotation { id: u32 },
    #[error("duplicate view id {0}")]
    DuplicateViewId(u32),
    #[error("camera {id}: bad intrinsics ({reason})")]
    BadIntrinsics { id: u32, reason: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image codec failure: {0}")]
    Image(String),
    #[error("view set is empty")]
    EmptyResult,
    #[error("sampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("click on view {view_id} at ({x}, {y}) is invalid: {reason}")]
    InvalidClick {
        view_id: u32,
        x: f64,
        y: f64,
        reason: String,
    },
    #[error("selection is empty")]
    EmptySelection,
    #[error("selection index {index} out of range for a scene of {len} Gaussians")]
    SelectionOutOfRange { index: u32, len: usize },
    #[error("selection was made on scene {selection} but the target scene is {scene}")]
    SelectionMismatch { selection: String, scene: String },
}

/// One anisotropic 3D Gaussian with activated attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    /// View-independent (DC) color, already offset by 0.5.
    pub color: Vector3<f64>,
    /// Spherical-harmonic coefficients of bands 1..=degree, `(degree+1)^2 - 1` entries.
    pub sh_rest: Vec<Vector3<f64>>,
}

impl Gaussian {
    /// Degree-0 Gaussian.
    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        Self {
            position,
            scale,
            rotation,
            opacity,
            color,
            sh_rest: Vec::new(),
        }
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let m = r * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::InvalidGaussian {
            index,
            reason: reason.to_string(),
        };
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite position"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(bad("opacity outside [0, 1]"));
        }
        if !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(bad("scale components must be positive"));
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > 1e-6 {
            return Err(bad("rotation is not a unit quaternion"));
        }
        if !self.color.iter().all(|c| c.is_finite()) {
            return Err(bad("non-finite color"));
        }
        if !self.sh_rest.iter().all(|c| c.iter().all(|v| v.is_finite())) {
            return Err(bad("non-finite SH coefficient"));
        }
        Ok(())
    }
}

/// Number of non-DC SH coefficients per channel for a degree.
pub fn sh_rest_len(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d - 1
}

/// An ordered set of Gaussians. The index of a Gaussian is its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    labels: Option<Vec<u32>>,
    sh_degree: u8,
    content_hash: String,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, labels: Option<Vec<u32>>) -> Result<Self, SceneError> {
        let sh_degree = match gaussians.first() {
            Some(g) => degree_for_rest_len(g.sh_rest.len()).ok_or_else(|| {
                SceneError::InvalidGaussian {
                    index: 0,
                    reason: format!("{} SH rest coefficients is not a valid degree", g.sh_rest.len()),
                }
            })?,
            None => 0,
        };
        Self::with_degree(gaussians, labels, sh_degree)
    }

    pub fn with_degree(
        gaussians: Vec<Gaussian>,
        labels: Option<Vec<u32>>,
        sh_degree: u8,
    ) -> Result<Self, SceneError> {
        if sh_degree > 3 {
            return Err(SceneError::InvalidGaussian {
                index: 0,
                reason: format!("SH degree {sh_degree} > 3"),
            });
        }
        let rest = sh_rest_len(sh_degree);
        for (i, g) in gaussians.iter().enumerate() {
            g.validate(i)?;
            if g.sh_rest.len() != rest {
                return Err(SceneError::InvalidGaussian {
                    index: i,
                    reason: format!("expected {rest} SH rest coefficients, found {}", g.sh_rest.len()),
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != gaussians.len() {
                return Err(SceneError::LabelCount {
                    labels: l.len(),
                    gaussians: gaussians.len(),
                });
            }
        }
        let content_hash = content_digest(&gaussians, labels.as_deref(), sh_degree);
        Ok(Self {
            gaussians,
            labels,
            sh_degree,
            content_hash,
        })
    }

    pub fn empty() -> Self {
        Self::with_degree(Vec::new(), None, 0).expect("empty scene is valid")
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    /// Hex SHA-256 over every attribute byte.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn into_parts(self) -> (Vec<Gaussian>, Option<Vec<u32>>, u8) {
        (self.gaussians, self.labels, self.sh_degree)
    }

    /// Center and radius of a sphere enclosing every Gaussian center.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        if self.gaussians.is_empty() {
            return (Vector3::zeros(), 0.0);
        }
        let center = self
            .gaussians
            .iter()
            .fold(Vector3::zeros(), |acc, g| acc + g.position)
            / self.gaussians.len() as f64;
        let radius = self
            .gaussians
            .iter()
            .map(|g| (g.position - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }
}

fn degree_for_rest_len(len: usize) -> Option<u8> {
    (0..=3u8).find(|&d| sh_rest_len(d) == len)
}

fn content_digest(gaussians: &[Gaussian], labels: Option<&[u32]>, sh_degree: u8) -> String {
    let mut hasher = Sha256::new();
    hasher.update([sh_degree]);
    hasher.update((gaussians.len() as u64).to_le_bytes());
    for g in gaussians {
        let q = g.rotation.quaternion();
        let quat = [q.w, q.i, q.j, q.k];
        let scalars = g
            .position
            .iter()
            .chain(g.scale.iter())
            .chain(quat.iter())
            .chain(std::iter::once(&g.opacity))
            .chain(g.color.iter())
            .chain(g.sh_rest.iter().flat_map(|c| c.iter()));
        for v in scalars {
            hasher.update(v.to_le_bytes());
        }
    }
    match labels {
        Some(l) => {
            hasher.update([1u8]);
            for v in l {
                hasher.update(v.to_le_bytes());
            }
        }
        None => hasher.update([0u8]),
    }
    hex::encode(hasher.finalize())
}

/// Pinhole camera, world-to-camera: `x_cam = R x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::BadIntrinsics {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.width == 0 || self.height == 0 {
            return Err(bad("zero image size"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(bad("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(bad("principal point outside the image"));
        }
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !r.iter().all(|v| v.is_finite()) || ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(SceneError::NonOrthonormalRotation { id: self.id });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite translation"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates and camera depth of a world point; `None` at or behind `z = 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((
            Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy),
            c.z,
        ))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        id: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        size: (u32, u32),
        focal: f64,
    ) -> Self {
        let z = (target - eye).normalize();
        let y = (-up + z * up.dot(&z)).normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self {
            id,
            width: size.0,
            height: size.1,
            fx: focal,
            fy: focal,
            cx: size.0 as f64 / 2.0,
            cy: size.1 as f64 / 2.0,
            rotation,
            translation,
        }
    }
}

/// Ordered list of cameras.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewSet {
    cameras: Vec<Camera>,
}

impl ViewSet {
    pub fn new(cameras: Vec<Camera>) -> Result<Self, SceneError> {
        let mut seen = std::collections::HashSet::new();
        for c in &cameras {
            c.validate()?;
            if !seen.insert(c.id) {
                return Err(SceneError::DuplicateViewId(c.id));
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn get(&self, id: u32) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Camera> {
        self.cameras.iter()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.id).collect()
    }
}

/// Uniform-stride view subsampling with an optional seeded shuffle.
///
/// Keeps `ceil(rate * K)` views at stride `floor(K / n)` starting from index 0.
pub fn subsample_views(views: &ViewSet, rate: f64, shuffle: bool, seed: u64) -> Result<ViewSet, SceneError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(SceneError::BadRate(rate));
    }
    if views.is_empty() {
        return Err(SceneError::EmptyResult);
    }
    let k = views.len();
    let n = ((rate * k as f64).ceil() as usize).clamp(1, k);
    let stride = (k / n).max(1);
    let mut cameras: Vec<Camera> = (0..n).map(|i| views.cameras[i * stride].clone()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cameras.shuffle(&mut rng);
    }
    Ok(ViewSet { cameras })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClickSource {
    #[default]
    User,
    Propagated,
}

/// A 2D click in continuous pixel coordinates of its view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub view_id: u32,
    pub x: f64,
    pub y: f64,
    pub polarity: Polarity,
    #[serde(default)]
    pub source: ClickSource,
}

impl Click {
    pub fn user(view_id: u32, x: f64, y: f64, polarity: Polarity) -> Self {
        Self {
            view_id,
            x,
            y,
            polarity,
            source: ClickSource::User,
        }
    }

    pub fn validate(&self, cam: &Camera) -> Result<(), SceneError> {
        if cam.id != self.view_id {
            return Err(self.invalid(format!("camera {} is not the owning view", cam.id)));
        }
        if !cam.contains(self.x, self.y) {
            return Err(self.invalid(format!("outside the {}x{} image", cam.width, cam.height)));
        }
        Ok(())
    }

    fn invalid(&self, reason: String) -> SceneError {
        SceneError::InvalidClick {
            view_id: self.view_id,
            x: self.x,
            y: self.y,
            reason,
        }
    }

    /// Integer pixel under the click.
    pub fn pixel(&self) -> (u32, u32) {
        (self.x.floor().max(0.0) as u32, self.y.floor().max(0.0) as u32)
    }
}

/// Binary per-view mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(view_id: u32, width: u32, height: u32) -> Self {
        Self {
            view_id,
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn for_camera(cam: &Camera) -> Self {
        Self::empty(cam.id, cam.width, cam.height)
    }

    pub fn from_fn(view_id: u32, width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self {
            view_id,
            width,
            height,
            bits,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn complement(&self) -> Mask {
        Mask {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn matches_camera(&self, cam: &Camera) -> bool {
        self.width == cam.width && self.height == cam.height
    }
}

/// Sorted, unique, non-empty Gaussian index set bound to one scene version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    scene_hash: String,
    indices: Vec<u32>,
}

impl Selection {
    pub fn new(scene: &GaussianScene, indices: impl IntoIterator<Item = u32>) -> Result<Self, SceneError> {
        let mut indices: Vec<u32> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        let sel = Self {
            scene_hash: scene.content_hash().to_string(),
            indices,
        };
        sel.check(scene)?;
        Ok(sel)
    }

    /// Every Gaussian of the scene.
    pub fn all(scene: &GaussianScene) -> Result<Self, SceneError> {
        Self::new(scene, 0..scene.len() as u32)
    }

    /// Rebuild from serialized parts; invariants are checked again at use time.
    pub fn from_parts(scene_hash: String, mut indices: Vec<u32>) -> Result<Self, SceneError> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(SceneError::EmptySelection);
        }
        Ok(Self { scene_hash, indices })
    }

    pub fn scene_hash(&self) -> &str {
        &self.scene_hash
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fails unless this selection is bound to `scene` and all indices are in range.
    pub fn check(&self, scene: &GaussianScene) -> Result<(), SceneError> {
        if self.indices.is_empty() {
            return Err(SceneError::EmptySelection);
        }
        if self.scene_hash != scene.content_hash() {
            return Err(SceneError::SelectionMismatch {
                selection: self.scene_hash.clone(),
                scene: scene.content_hash().to_string(),
            });
        }
        if let Some(&last) = self.indices.last() {
            if last as usize >= scene.len() {
                return Err(SceneError::SelectionOutOfRange {
                    index: last,
                    len: scene.len(),
                });
            }
        }
        Ok(())
    }

    /// Membership flags over the whole scene.
    pub fn membership(&self, len: usize) -> Vec<bool> {
        let mut flags = vec![false; len];
        for &i in &self.indices {
            if let Some(f) = flags.get_mut(i as usize) {
                *f = true;
            }
        }
        flags
    }
}
