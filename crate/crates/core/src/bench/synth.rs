//! Procedural labeled scenes: colored Gaussian blobs over a gray floor,
//! watched by an orbit of cameras.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::render::{render_object_map, LabelMap};
use crate::scene::{Camera, Click, Gaussian, GaussianScene, Mask, Polarity, ViewSet, BACKGROUND_LABEL};

/// Saturated object colors, pairwise at least 0.3 apart in some channel.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.20],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.80],
    [0.10, 0.80, 0.85],
    [0.95, 0.50, 0.05],
    [0.50, 0.20, 0.95],
];

/// Floor clutter color range.
pub const CLUTTER_GRAY: (f64, f64) = (0.40, 0.60);
/// Share of clutter patches painted in a palette color instead of gray, so
/// appearance alone does not identify an object.
pub const CLUTTER_PALETTE_SHARE: f64 = 0.5;

/// Minimum Chebyshev distance between any two palette entries.
pub const MIN_COLOR_DISTANCE: f64 = 0.3;

const FLOOR_Y: f64 = -0.7;
const FLOOR_RADIUS: f64 = 1.1;
const CENTROID_RADIUS: f64 = 0.8;
const OBJECT_GAP: f64 = 0.1;
const PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_objects: usize,
    pub gaussians_per_object: usize,
    pub clutter_count: usize,
    /// Object radius range in world units.
    pub object_radius: (f64, f64),
    /// Explicit object colors; drawn from [`PALETTE`] when absent.
    pub palette: Option<Vec<[f64; 3]>>,
    pub orbit_count: usize,
    pub orbit_radius: f64,
    pub orbit_elevation_deg: f64,
    pub image_size: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 4,
            gaussians_per_object: 200,
            clutter_count: 300,
            object_radius: (0.24, 0.32),
            palette: None,
            orbit_count: 20,
            orbit_radius: 3.2,
            orbit_elevation_deg: 25.0,
            image_size: 128,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn total_gaussians(&self) -> usize {
        self.n_objects * self.gaussians_per_object + self.clutter_count
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::SpecInfeasible(m));
        if !(3..=8).contains(&self.n_objects) {
            return bad(format!("n_objects {} outside 3..=8", self.n_objects));
        }
        if !(30..=200).contains(&self.gaussians_per_object) {
            return bad(format!(
                "gaussians_per_object {} outside 30..=200",
                self.gaussians_per_object
            ));
        }
        let (lo, hi) = self.object_radius;
        if !(lo > 0.0 && hi >= lo && hi < 1.0) {
            return bad(format!("object radius range ({lo}, {hi}) is invalid"));
        }
        if self.orbit_count == 0 || self.image_size < 8 {
            return bad("orbit needs at least one camera and 8 px images".into());
        }
        if self.orbit_radius <= FLOOR_RADIUS + 0.2 {
            return bad(format!("orbit radius {} is inside the scene", self.orbit_radius));
        }
        let palette = self.palette.clone().unwrap_or_else(|| PALETTE.to_vec());
        if palette.len() < self.n_objects {
            return bad(format!("palette has {} colors for {} objects", palette.len(), self.n_objects));
        }
        for (i, a) in palette.iter().enumerate() {
            if !a.iter().all(|v| (0.0..=1.0).contains(v)) {
                return bad(format!("palette color {i} outside [0, 1]"));
            }
            for b in &palette[i + 1..] {
                if chebyshev(a, b) < MIN_COLOR_DISTANCE {
                    return bad(format!("palette colors {a:?} and {b:?} are closer than {MIN_COLOR_DISTANCE}"));
                }
            }
        }
        Ok(())
    }
}

pub fn chebyshev(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub scene: GaussianScene,
    pub views: ViewSet,
    pub label_maps: Vec<LabelMap>,
    /// Object with the largest footprint in view 0.
    pub target_label: u32,
    /// Positive click on the target in view 0.
    pub click: Click,
}

impl SyntheticScene {
    pub fn gt_mask(&self, view_index: usize) -> Mask {
        self.label_maps[view_index].mask_of(self.target_label)
    }

    /// Ground-truth target masks for every view.
    pub fn gt_masks(&self) -> Vec<Mask> {
        (0..self.label_maps.len()).map(|i| self.gt_mask(i)).collect()
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let mut sample = || StandardNormal.sample(rng);
    let q = Quaternion::new(sample(), sample(), sample(), sample());
    UnitQuaternion::from_quaternion(q)
}

fn in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

fn place_objects(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(Vector3<f64>, f64)>, BenchError> {
    let (lo, hi) = spec.object_radius;
    let mut placed: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(spec.n_objects);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if placed.len() == spec.n_objects {
            break;
        }
        let r = rng.random_range(lo..=hi);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dist = CENTROID_RADIUS * rng.random_range(0.0f64..1.0).sqrt();
        let y = rng.random_range((FLOOR_Y + r + 0.1)..=(FLOOR_Y + r + 0.1 + 0.6));
        let c = Vector3::new(dist * angle.cos(), y, dist * angle.sin());
        if placed.iter().all(|(o, ro)| (o - c).norm() >= r + ro + OBJECT_GAP) {
            placed.push((c, r));
        }
    }
    if placed.len() < spec.n_objects {
        return Err(BenchError::SpecInfeasible(format!(
            "could not separate {} objects of radius up to {hi}",
            spec.n_objects
        )));
    }
    Ok(placed)
}

fn orbit(spec: &SceneSpec, fit_radius: f64) -> ViewSet {
    let elev = spec.orbit_elevation_deg.to_radians();
    let d = spec.orbit_radius;
    let half_angle = (fit_radius / d).min(0.95).asin();
    let focal = 0.95 * (spec.image_size as f64 / 2.0) / half_angle.tan();
    let cameras = (0..spec.orbit_count)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / spec.orbit_count as f64;
            let eye = Vector3::new(d * elev.cos() * az.cos(), d * elev.sin(), d * elev.cos() * az.sin());
            Camera::look_at(
                i as u32,
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, 1.0, 0.0),
                (spec.image_size, spec.image_size),
                focal,
            )
        })
        .collect();
    ViewSet::new(cameras).expect("orbit cameras are valid")
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut palette = spec.palette.clone().unwrap_or_else(|| PALETTE.to_vec());
    if spec.palette.is_none() {
        palette.shuffle(&mut rng);
    }
    let objects = place_objects(spec, &mut rng)?;

    let mut gaussians = Vec::with_capacity(spec.total_gaussians());
    let mut labels = Vec::with_capacity(spec.total_gaussians());
    for (k, (center, radius)) in objects.iter().enumerate() {
        let base = Vector3::from(palette[k]);
        for _ in 0..spec.gaussians_per_object {
            let offset = in_ball(&mut rng, 0.9 * radius);
            let scale = Vector3::from_fn(|_, _| radius * rng.random_range(0.08..0.16));
            let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04));
            gaussians.push(Gaussian::new(
                center + offset,
                scale,
                random_rotation(&mut rng),
                rng.random_range(0.6..0.95),
                (base + jitter).map(|v| v.clamp(0.0, 1.0)),
            ));
            labels.push(k as u32);
        }
    }
    for _ in 0..spec.clutter_count {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dist = FLOOR_RADIUS * rng.random_range(0.0f64..1.0).sqrt();
        let size = rng.random_range(0.06..0.1);
        let gray = rng.random_range(CLUTTER_GRAY.0..CLUTTER_GRAY.1);
        let color = if rng.random_bool(CLUTTER_PALETTE_SHARE) {
            Vector3::from(palette[rng.random_range(0..palette.len())])
        } else {
            Vector3::repeat(gray)
        };
        gaussians.push(Gaussian::new(
            Vector3::new(dist * angle.cos(), FLOOR_Y + rng.random_range(-0.01..0.01), dist * angle.sin()),
            Vector3::new(size, 0.01, size),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), rng.random_range(0.0..std::f64::consts::PI)),
            rng.random_range(0.5..0.9),
            color,
        ));
        labels.push(BACKGROUND_LABEL);
    }

    let fit_radius = gaussians
        .iter()
        .map(|g| g.position.norm() + 3.0 * g.scale.max())
        .fold(0.0, f64::max);
    let scene = GaussianScene::new(gaussians, Some(labels)).map_err(BenchError::Scene)?;
    let views = orbit(spec, fit_radius);
    let label_maps: Vec<LabelMap> = views
        .iter()
        .map(|cam| render_object_map(&scene, cam).expect("synthetic scenes are labeled"))
        .collect();

    let first = &label_maps[0];
    let target_label = (0..spec.n_objects as u32)
        .max_by_key(|&l| (first.count(l), std::cmp::Reverse(l)))
        .expect("at least three objects");
    let (x, y) = region_click(first, target_label).ok_or_else(|| {
        BenchError::SpecInfeasible("no object is visible in view 0".to_string())
    })?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        scene,
        views,
        label_maps,
        target_label,
        click: Click::user(0, x, y, Polarity::Positive),
    })
}

/// Pixel center at the region centroid, or the nearest region pixel when the
/// centroid falls outside the region.
pub fn region_click(map: &LabelMap, label: u32) -> Option<(f64, f64)> {
    let pixels: Vec<(u32, u32)> = (0..map.height)
        .flat_map(|y| (0..map.width).map(move |x| (x, y)))
        .filter(|&(x, y)| map.get(x, y) == label)
        .collect();
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let mx = pixels.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / n;
    let my = pixels.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / n;
    let (cx, cy) = (mx.floor() as u32, my.floor() as u32);
    if cx < map.width && cy < map.height && map.get(cx, cy) == label {
        return Some((cx as f64 + 0.5, cy as f64 + 0.5));
    }
    let nearest = pixels
        .iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 + 0.5 - mx).powi(2) + (a.1 as f64 + 0.5 - my).powi(2);
            let db = (b.0 as f64 + 0.5 - mx).powi(2) + (b.1 as f64 + 0.5 - my).powi(2);
            da.total_cmp(&db)
        })
        .expect("non-empty");
    Some((nearest.0 as f64 + 0.5, nearest.1 as f64 + 0.5))
}
