//! Brute-force oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use gsculpt_core::scene::{Camera, Gaussian, GaussianScene, Mask};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One composited pixel: ordered `(gaussian, weight)` pairs, final transmittance and color.
pub struct OraclePixel {
    pub weights: Vec<(u32, f64)>,
    pub transmittance: f64,
    pub color: [f64; 3],
}

/// Evaluates every Gaussian at every pixel center with no screen-space culling.
pub fn composite(scene: &GaussianScene, cam: &Camera, background: [f64; 3]) -> Vec<OraclePixel> {
    struct Splat {
        index: u32,
        depth: f64,
        mean: Vector2<f64>,
        conic: Matrix2<f64>,
        opacity: f64,
        color: Vector3<f64>,
    }
    let mut splats: Vec<Splat> = Vec::new();
    for (i, g) in scene.gaussians().iter().enumerate() {
        let p = cam.rotation * g.position + cam.translation;
        if p.z <= 0.01 {
            continue;
        }
        let (fx, fy) = (cam.fx, cam.fy);
        let jac = Matrix2x3::new(fx / p.z, 0.0, -fx * p.x / (p.z * p.z), 0.0, fy / p.z, -fy * p.y / (p.z * p.z));
        let r = g.rotation.to_rotation_matrix().into_inner();
        let sigma = r * Matrix3::from_diagonal(&g.scale.component_mul(&g.scale)) * r.transpose();
        let jw = jac * cam.rotation;
        let cov = jw * sigma * jw.transpose() + Matrix2::identity() * 0.3;
        let Some(conic) = cov.try_inverse() else { continue };
        splats.push(Splat {
            index: i as u32,
            depth: p.z,
            mean: Vector2::new(fx * p.x / p.z + cam.cx, fy * p.y / p.z + cam.cy),
            conic,
            opacity: g.opacity,
            color: g.color,
        });
    }
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));

    let mut out = Vec::with_capacity(cam.pixel_count());
    for y in 0..cam.height {
        for x in 0..cam.width {
            let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut rgb = Vector3::zeros();
            let mut weights = Vec::new();
            for s in &splats {
                let d = c - s.mean;
                let alpha = (s.opacity * (-0.5 * (d.transpose() * s.conic * d)[(0, 0)]).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let w = alpha * t;
                rgb += s.color * w;
                weights.push((s.index, w));
                t *= 1.0 - alpha;
                if t < 1e-4 {
                    break;
                }
            }
            rgb += Vector3::from(background) * t;
            out.push(OraclePixel {
                weights,
                transmittance: t,
                color: [rgb.x, rgb.y, rgb.z],
            });
        }
    }
    out
}

/// Plain double-loop tally over `(pixel, contribution)` pairs.
pub fn tally(pixels: &[OraclePixel], mask: &Mask, len: usize, power: impl Fn(u32, f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut positive = vec![0.0; len];
    let mut total = vec![0.0; len];
    for (i, px) in pixels.iter().enumerate() {
        for &(g, w) in &px.weights {
            let v = power(g, w);
            total[g as usize] += v;
            if mask.bits[i] {
                positive[g as usize] += v;
            }
        }
    }
    (positive, total)
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, extent: f64) -> Gaussian {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Gaussian::new(
        Vector3::from_fn(|_, _| rng.random_range(-extent..extent)),
        Vector3::from_fn(|_, _| rng.random_range(0.02..0.3)),
        UnitQuaternion::from_quaternion(q),
        rng.random_range(0.05..0.99),
        Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
    )
}

pub fn random_scene(seed: u64, max_len: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_len);
    let gaussians = (0..n).map(|_| random_gaussian(&mut rng, 0.8)).collect();
    let labels = (0..n as u32).map(|i| i % 3).collect();
    GaussianScene::new(gaussians, Some(labels)).unwrap()
}

/// Camera on a sphere of radius 3 looking at the origin.
pub fn random_camera(rng: &mut ChaCha8Rng, id: u32, size: (u32, u32)) -> Camera {
    let dir = loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 && v.y.abs() < 0.9 * n {
            break v / n;
        }
    };
    let focal = rng.random_range(0.8..1.6) * size.0 as f64;
    Camera::look_at(id, dir * 3.0, Vector3::zeros(), Vector3::y(), size, focal)
}
