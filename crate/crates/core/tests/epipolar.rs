mod common;

use gsculpt_core::bench::{generate_scene, region_click, SceneSpec};
use gsculpt_core::epipolar::{
    all_cells, bresenham, first_argmax, affinities, match_click, project_ray, propagate_clicks, rasterize_line,
    register_ray, EpipolarError, FeatureMap, PropagationOptions,
};
use gsculpt_core::perception::{FeatureExtractor, OracleFeatures, ViewInput};
use gsculpt_core::render::{render, RenderOptions};
use gsculpt_core::scene::{Camera, Click, ClickSource, Polarity};
use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pose_camera(rng: &mut ChaCha8Rng, id: u32) -> Camera {
    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let rotation = Rotation3::new(axis * rng.random_range(0.0..std::f64::consts::PI)).into_inner();
    let center = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let (w, h) = (rng.random_range(32..256), rng.random_range(32..256));
    let f = rng.random_range(0.5..2.0) * w as f64;
    Camera {
        id,
        width: w,
        height: h,
        fx: f,
        fy: f * rng.random_range(0.9..1.1),
        cx: w as f64 * rng.random_range(0.3..0.7),
        cy: h as f64 * rng.random_range(0.3..0.7),
        rotation,
        translation: -(rotation * center),
    }
}

#[test]
fn ray_points_project_onto_the_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 1000 {
        let a = random_pose_camera(&mut rng, 0);
        let b = random_pose_camera(&mut rng, 1);
        let click = Click::user(
            0,
            rng.random_range(0.0..a.width as f64),
            rng.random_range(0.0..a.height as f64),
            Polarity::Positive,
        );
        let ray = register_ray(&click, &a).unwrap();
        let Ok(line) = project_ray(&ray, &b, 1.0) else { continue };
        pairs += 1;
        for k in 0..20 {
            let d = 0.05 * 1.3f64.powi(k);
            let p = ray.point_at(d);
            let c = b.to_camera(&p);
            if c.z <= 0.05 {
                continue;
            }
            let (q, _) = b.project(&p).unwrap();
            if q.x.abs() > 50.0 * b.width as f64 || q.y.abs() > 50.0 * b.height as f64 {
                continue;
            }
            worst = worst.max(line.distance_to(&q));
            checked += 1;
        }
    }
    assert!(checked > 5000, "{checked}");
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn ray_passes_through_the_clicked_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let cam = random_pose_camera(&mut rng, 0);
        let (x, y) = (rng.random_range(0.0..cam.width as f64), rng.random_range(0.0..cam.height as f64));
        let ray = register_ray(&Click::user(0, x, y, Polarity::Positive), &cam).unwrap();
        assert!((ray.origin - cam.center()).norm() < 1e-9);
        for d in [0.5, 2.0, 9.0] {
            let (q, depth) = cam.project(&ray.point_at(d)).unwrap();
            assert!((q - Vector2::new(x, y)).norm() < 1e-6);
            assert!(depth > 0.0);
        }
    }
}

#[test]
fn zero_baseline_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let a = random_pose_camera(&mut rng, 0);
        let click = Click::user(0, a.cx + 3.0, a.cy - 2.0, Polarity::Positive);
        let ray = register_ray(&click, &a).unwrap();
        let same = Camera { id: 1, ..a.clone() };
        assert_eq!(project_ray(&ray, &same, 1.0), Err(EpipolarError::DegenerateEpipole));
        // pure rotation about the same center
        let spin = Rotation3::from_axis_angle(&Vector3::y_axis(), rng.random_range(-0.5..0.5)).into_inner();
        let rotated = Camera {
            id: 2,
            rotation: spin * a.rotation,
            translation: -(spin * a.rotation * a.center()),
            ..a.clone()
        };
        assert!(matches!(
            project_ray(&ray, &rotated, 1.0),
            Err(EpipolarError::DegenerateEpipole) | Err(EpipolarError::RayBehindCamera)
        ));
    }
}

#[test]
fn ray_entirely_behind_target_is_rejected() {
    let a = Camera {
        id: 0,
        width: 64,
        height: 64,
        fx: 64.0,
        fy: 64.0,
        cx: 32.0,
        cy: 32.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
    };
    // b sits in front of a and looks back toward it
    let flip = Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI).into_inner();
    let b = Camera {
        id: 1,
        rotation: flip,
        translation: -(flip * Vector3::new(0.0, 0.0, -1.0)),
        ..a.clone()
    };
    let ray = register_ray(&Click::user(0, 32.0, 32.0, Polarity::Positive), &a).unwrap();
    // ray heads along +z, away from b which looks along -z from z = -1
    assert_eq!(project_ray(&ray, &b, 1.0), Err(EpipolarError::RayBehindCamera));
}

proptest! {
    #[test]
    fn bresenham_is_a_tight_connected_walk(x0 in -40i64..40, y0 in -40i64..40, x1 in -40i64..40, y1 in -40i64..40) {
        let cells = bresenham((x0, y0), (x1, y1));
        prop_assert_eq!(cells[0], (x0, y0));
        prop_assert_eq!(*cells.last().unwrap(), (x1, y1));
        let (dx, dy) = (x1 - x0, y1 - y0);
        prop_assert_eq!(cells.len() as i64, dx.abs().max(dy.abs()) + 1);
        for w in cells.windows(2) {
            let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(step.0.abs() <= 1 && step.1.abs() <= 1 && step != (0, 0));
            prop_assert!(step.0 * dx >= 0 && step.1 * dy >= 0);
        }
        // every cell sits within half a cell of the ideal segment along the minor axis
        let len = ((dx * dx + dy * dy) as f64).sqrt();
        if len > 0.0 {
            let major = dx.abs().max(dy.abs()) as f64;
            for &(x, y) in &cells {
                let cross = ((x - x0) * dy - (y - y0) * dx) as f64;
                prop_assert!(cross.abs() / major <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn restricted_argmax_equals_band_argmax(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, dim) = (40u32, 30u32, 6usize);
        let mut data: Vec<f32> = Vec::with_capacity((w * h) as usize * dim);
        for _ in 0..w * h {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            data.extend(v.iter().map(|x| x / n));
        }
        let mut fmap = FeatureMap { view_id: 1, width: w, height: h, dim, stride: 1, data };
        // a line across the image and a planted true match on it
        let p1 = Vector2::new(rng.random_range(0.0..w as f64), 0.0);
        let p2 = Vector2::new(rng.random_range(0.0..w as f64), h as f64);
        let line = gsculpt_core::epipolar::EpipolarLine {
            view_id: 1,
            p1,
            p2,
            clipped_segment: gsculpt_core::epipolar::clip_line(p1, p2, w as f64, h as f64),
        };
        let samples = rasterize_line(&line, &fmap).unwrap();
        let planted = samples[rng.random_range(0..samples.len())];
        let source: Vec<f32> = fmap.feature(planted.0, planted.1).to_vec();
        // a decoy elsewhere with the same descriptor, far from the line
        let decoy = all_cells(&fmap)
            .into_iter()
            .find(|&(c, r)| line.distance_to(&Vector2::new(c as f64 + 0.5, r as f64 + 0.5)) > 6.0)
            .unwrap();
        let at = ((decoy.1 * w + decoy.0) as usize) * dim;
        fmap.data[at..at + dim].copy_from_slice(&source);

        let band: Vec<(u32, u32)> = all_cells(&fmap)
            .into_iter()
            .filter(|&(c, r)| line.distance_to(&Vector2::new(c as f64 + 0.5, r as f64 + 0.5)) <= 2.0)
            .collect();
        let on_line = match_click(&source, &samples, &fmap).unwrap();
        let in_band = band[first_argmax(&affinities(&source, &band, &fmap)).unwrap()];
        prop_assert_eq!(on_line, fmap.cell_center(in_band.0, in_band.1));
        prop_assert_eq!(on_line, fmap.cell_center(planted.0, planted.1));
    }
}

#[test]
fn first_maximum_wins_ties() {
    assert_eq!(first_argmax(&[0.1, 0.9, 0.9, 0.2]), Some(1));
    assert_eq!(first_argmax(&[]), None);
}

#[test]
fn mixed_clicks_land_in_the_right_regions() {
    let spec = SceneSpec {
        orbit_count: 10,
        ..SceneSpec::with_seed(4)
    };
    let synth = generate_scene(&spec).unwrap();
    let target = synth.target_label;
    let other = (0..spec.n_objects as u32)
        .filter(|&l| l != target)
        .max_by_key(|&l| synth.label_maps[0].count(l))
        .unwrap();
    let (nx, ny) = region_click(&synth.label_maps[0], other).unwrap();
    let clicks = vec![synth.click.clone(), Click::user(0, nx, ny, Polarity::Negative)];

    let oracle = OracleFeatures::new(4);
    let features: Vec<FeatureMap> = synth
        .views
        .iter()
        .map(|cam| {
            let image = render(&synth.scene, cam, &RenderOptions::default()).color;
            oracle.extract(&ViewInput { camera: cam, image: &image }).unwrap()
        })
        .collect();
    let options = PropagationOptions {
        depth_scale: synth.scene.bounding_sphere().1,
        epipolar: true,
    };
    let out = propagate_clicks(&clicks, &synth.views, &features, &options).unwrap();
    assert_eq!(&out.clicks[..2], &clicks[..]);

    let mut good_views = 1; // the source view holds the user clicks
    for cam in synth.views.iter().filter(|c| c.id != 0) {
        let map = &synth.label_maps[cam.id as usize];
        let here: Vec<&Click> = out.clicks.iter().filter(|c| c.view_id == cam.id).collect();
        assert!(here.iter().all(|c| c.source == ClickSource::Propagated));
        let pos_ok = here
            .iter()
            .filter(|c| c.polarity == Polarity::Positive)
            .all(|c| { let (x, y) = c.pixel(); map.get(x, y) == target });
        let neg_ok = here
            .iter()
            .filter(|c| c.polarity == Polarity::Negative)
            .all(|c| { let (x, y) = c.pixel(); map.get(x, y) != target });
        if here.len() == 2 && pos_ok && neg_ok {
            good_views += 1;
        }
    }
    assert!(good_views >= 9, "{good_views} of 10");
}

#[test]
fn matched_click_sits_on_the_line_and_the_object() {
    let synth = generate_scene(&SceneSpec::with_seed(1)).unwrap();
    let oracle = OracleFeatures::new(4);
    let features: Vec<FeatureMap> = synth
        .views
        .iter()
        .map(|cam| {
            let image = render(&synth.scene, cam, &RenderOptions::default()).color;
            oracle.extract(&ViewInput { camera: cam, image: &image }).unwrap()
        })
        .collect();
    let source = &synth.views.cameras()[0];
    let ray = register_ray(&synth.click, source).unwrap();
    let radius = synth.scene.bounding_sphere().1;
    let options = PropagationOptions { depth_scale: radius, epipolar: true };
    let out = propagate_clicks(&[synth.click.clone()], &synth.views, &features, &options).unwrap();
    let stride = features[0].stride as f64;
    let mut on_object = 0;
    for c in &out.clicks[1..] {
        let cam = synth.views.get(c.view_id).unwrap();
        let line = project_ray(&ray, cam, radius).unwrap();
        // a cell center is at most half a cell diagonal from any line crossing the cell
        assert!(line.distance_to(&Vector2::new(c.x, c.y)) <= stride * std::f64::consts::FRAC_1_SQRT_2 + 1e-9);
        let (x, y) = c.pixel();
        if synth.label_maps[c.view_id as usize].get(x, y) == synth.target_label {
            on_object += 1;
        }
    }
    assert!(on_object >= 17, "{on_object} of 19");
}

#[test]
fn full_grid_search_ignores_geometry() {
    let fmap = FeatureMap {
        view_id: 0,
        width: 4,
        height: 3,
        dim: 2,
        stride: 8,
        data: (0..12).flat_map(|i| if i == 7 { [1.0f32, 0.0] } else { [0.0, 1.0] }).collect(),
    };
    let cells = all_cells(&fmap);
    assert_eq!(cells.len(), 12);
    assert_eq!(match_click(&[1.0, 0.0], &cells, &fmap), Some((28.0, 12.0)));
}

#[test]
fn propagation_skips_are_reported_per_view() {
    let synth = generate_scene(&SceneSpec::with_seed(2)).unwrap();
    let features: Vec<FeatureMap> = Vec::new();
    let options = PropagationOptions { depth_scale: 1.0, epipolar: true };
    assert_eq!(
        propagate_clicks(&[synth.click.clone()], &synth.views, &features, &options).unwrap_err(),
        EpipolarError::MissingFeatures(0)
    );
    let unknown = Click::user(99, 1.0, 1.0, Polarity::Positive);
    assert_eq!(
        propagate_clicks(&[unknown], &synth.views, &features, &options).unwrap_err(),
        EpipolarError::UnknownSourceView(99)
    );
}
