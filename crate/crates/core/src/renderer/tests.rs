use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check, worst};
use crate::autodiff::{Record, Tensor};

fn interior_texture(h: usize, w: usize, seed: u64) -> TextureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * h * w).map(|_| rng.gen_range(0.05..0.75)).collect();
    TextureMap::from_tensor(Tensor::new(vec![3, h, w], data).unwrap()).unwrap()
}

#[test]
fn identity_view_reproduces_texture() {
    let tex = TextureMap::car(16, 24).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let img = render_image(&obj, &tex, &ViewParams::default(), Canvas::new(24, 16)).unwrap();
    assert_eq!(&img, tex.tensor());
}

#[test]
fn zero_gain_blacks_out_target() {
    let tex = TextureMap::car(16, 24).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let view = ViewParams {
        gain: 0.0,
        ..ViewParams::default()
    };
    let canvas = Canvas::new(40, 30);
    let img = render_image(&obj, &tex, &view, canvas).unwrap();
    let cov = coverage(&obj, &view, canvas, 16, 24, &|_, _| false).unwrap();
    assert_eq!(cov.pixels.len(), 24 * 16);
    for &p in &cov.pixels {
        for c in 0..3 {
            assert_eq!(img.data()[c * 1200 + p], 0.0);
        }
    }
    // background untouched
    assert_eq!(img.data()[0], 0.5);
}

#[test]
fn degenerate_quad_is_rejected() {
    assert!(PlanarObject::rectangle(0.0, 5.0).is_err());
    assert!(PlanarObject::new([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [0.0, 1.0]]).is_err());
}

fn target_mean_grad_check(view: ViewParams, seed: u64) {
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = interior_texture(16, 24, seed);
    let canvas = Canvas::new(48, 40);
    let cov = coverage(&obj, &view, canvas, 16, 24, &|_, _| false).unwrap();
    let pixels = cov.pixels.clone();
    let loss = move |r: &mut Record, t| {
        let img = render(r, &obj, t, &view, canvas, None).unwrap();
        let idx: Vec<usize> = (0..3)
            .flat_map(|c| pixels.iter().map(move |p| c * 48 * 40 + p))
            .collect();
        let flat = r.reshape(img, vec![3 * 48 * 40]).unwrap();
        let g = r.gather(flat, idx).unwrap();
        r.mean(g)
    };
    let mut rec = Record::new();
    let t = rec.param(tex.tensor().clone());
    let l = loss(&mut rec, t);
    let grads = rec.backward(l).unwrap();
    let analytic = grads.get(t).unwrap().clone();
    let f = |x: &Tensor| {
        let mut r = Record::new();
        let t = r.param(x.clone());
        let l = loss(&mut r, t);
        r.value(l).item()
    };
    let idx: Vec<usize> = (0..tex.tensor().len()).collect();
    let checks = check(f, tex.tensor(), &analytic, &idx, 1e-5, 1e-8);
    let w = worst(&checks).unwrap();
    assert!(w.rel_err <= 1e-4, "{w:?}");
}

#[test]
fn target_mean_gradient_matches_finite_differences() {
    target_mean_grad_check(
        ViewParams {
            scale: 1.13,
            rotation: 0.21,
            shear: -0.12,
            translation: [0.37, -1.6],
            gain: 1.2,
            ..ViewParams::default()
        },
        1,
    );
    target_mean_grad_check(
        ViewParams {
            scale: 0.71,
            rotation: -0.4,
            gain: 0.9,
            ..ViewParams::default()
        },
        2,
    );
}

#[test]
fn rendering_is_pure() {
    let tex = TextureMap::car(16, 24).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let view = ViewParams {
        rotation: 0.3,
        shear: 0.1,
        scale: 1.4,
        ..ViewParams::default()
    };
    let a = render_image(&obj, &tex, &view, Canvas::new(64, 64)).unwrap();
    let b = render_image(&obj, &tex, &view, Canvas::new(64, 64)).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn integer_translation_shifts_target_exactly() {
    let tex = TextureMap::car(16, 24).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let view = ViewParams {
        rotation: 0.25,
        scale: 1.1,
        translation: [0.3, 0.2],
        ..ViewParams::default()
    };
    let (dx, dy) = (5usize, 3usize);
    let moved = ViewParams {
        translation: [
            view.translation[0] + dx as f64,
            view.translation[1] + dy as f64,
        ],
        ..view.clone()
    };
    let canvas = Canvas::new(64, 64);
    let a = render_image(&obj, &tex, &view, canvas).unwrap();
    let b = render_image(&obj, &tex, &moved, canvas).unwrap();
    for c in 0..3 {
        for y in 0..64 - dy {
            for x in 0..64 - dx {
                let pa = a.data()[c * 4096 + y * 64 + x];
                let pb = b.data()[c * 4096 + (y + dy) * 64 + x + dx];
                assert!((pa - pb).abs() < 1e-12, "({x},{y})");
            }
        }
    }
}

#[test]
fn unsampled_texels_get_zero_gradient() {
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = interior_texture(16, 24, 3);
    let view = ViewParams {
        scale: 0.3,
        ..ViewParams::default()
    };
    let canvas = Canvas::new(32, 32);
    let cov = coverage(&obj, &view, canvas, 16, 24, &|_, _| false).unwrap();
    let mut touched = vec![false; 16 * 24];
    for &(y, x) in &cov.texels {
        let (fy, fx) = (y - 0.5, x - 0.5);
        for ty in [fy.floor(), fy.floor() + 1.0] {
            for tx in [fx.floor(), fx.floor() + 1.0] {
                let ty = ty.clamp(0.0, 15.0) as usize;
                let tx = tx.clamp(0.0, 23.0) as usize;
                touched[ty * 24 + tx] = true;
            }
        }
    }
    let mut rec = Record::new();
    let t = rec.param(tex.tensor().clone());
    let img = render(&mut rec, &obj, t, &view, canvas, None).unwrap();
    let s = rec.sum(img);
    let g = rec.backward(s).unwrap();
    let g = g.get(t).unwrap();
    let mut zero = 0;
    for c in 0..3 {
        for i in 0..16 * 24 {
            if !touched[i] {
                assert_eq!(g.data()[c * 384 + i], 0.0);
                zero += 1;
            }
        }
    }
    assert!(zero > 0, "scale 0.3 must leave texels unsampled");
}

#[test]
fn synthetic_occluder_covers_target() {
    let tex = TextureMap::solid(16, 24, [1.0, 0.0, 0.0]).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let view = ViewParams {
        occluder_phase: 0.5,
        ..ViewParams::default()
    };
    let occ = SyntheticOccluder {
        width: 4.0,
        color: [0.0, 0.0, 1.0],
    };
    let mut rec = Record::new();
    let t = rec.constant(tex.tensor().clone());
    let img = render(&mut rec, &obj, t, &view, Canvas::new(40, 40), Some(&occ)).unwrap();
    let v = rec.value(img);
    // column 20 is the bar centre; blue channel set, red cleared
    assert_eq!(v.data()[20 * 40 + 20], 0.0);
    assert_eq!(v.data()[2 * 1600 + 20 * 40 + 20], 1.0);
    assert_eq!(v.data()[20 * 40 + 12], 1.0);
}

#[test]
fn sequence_without_occluders_matches_render() {
    let scene = Scene::unoccluded();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::car(16, 24).unwrap();
    let (frames, boxes) = render_sequence(&scene, &obj, &tex).unwrap();
    assert_eq!(frames.len(), 60);
    assert_eq!(boxes.len(), 60);
    for (f, pose) in [0usize, 17, 59]
        .iter()
        .zip([0usize, 17, 59].map(|i| scene.trajectory()[i]))
    {
        let view = scene.view_for(&pose);
        let direct = render_image(&obj, &tex, &view, scene.canvas()).unwrap();
        assert_eq!(frames[*f], direct);
    }
    assert!((boxes[0].cx - 24.0).abs() < 1e-12 && (boxes[0].w - 24.0).abs() < 1e-12);
}

#[test]
fn occluder_replaces_target_pixels() {
    let scene = Scene::bridge();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::solid(16, 24, [1.0, 0.0, 0.0]).unwrap();
    let (frames, boxes) = render_sequence(&scene, &obj, &tex).unwrap();
    let plane = scene.width * scene.height;
    let mut seen = false;
    for (f, b) in frames.iter().zip(&boxes) {
        let y = b.cy as usize;
        for x in b.x0().ceil() as usize..b.x1().floor() as usize {
            let red = f.data()[y * scene.width + x];
            if scene.occluded(x) {
                assert_eq!(red, 0.3);
                seen = true;
            } else {
                assert_eq!(red, 1.0);
            }
        }
        let _ = plane;
    }
    assert!(seen);
}

/// Oracle: intervals where the target's horizontal extent intersects a bar,
/// from the box and bar geometry alone.
fn overlap_intervals(scene: &Scene, boxes: &[crate::tracker::BBox]) -> Vec<(usize, usize)> {
    let hits: Vec<bool> = boxes
        .iter()
        .map(|b| {
            scene
                .occluders
                .iter()
                .any(|o| b.x0() < o.x + o.width / 2.0 && o.x - o.width / 2.0 < b.x1())
        })
        .collect();
    let mut out = Vec::new();
    let mut start = None;
    for (i, &h) in hits.iter().chain(std::iter::once(&false)).enumerate() {
        match (h, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    out
}

#[test]
fn default_scene_has_five_disjoint_occlusion_intervals() {
    let scene = Scene::bridge();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::solid(16, 24, [1.0, 0.0, 0.0]).unwrap();
    let (frames, boxes) = render_sequence(&scene, &obj, &tex).unwrap();
    let intervals = overlap_intervals(&scene, &boxes);
    assert_eq!(intervals.len(), 5, "{intervals:?}");
    // rendered frames agree: a frame is occluded iff some bar pixel sits
    // inside the target box
    for (i, (f, b)) in frames.iter().zip(&boxes).enumerate() {
        let y = b.cy as usize;
        let covered = (b.x0().floor() as usize..b.x1().ceil() as usize)
            .any(|x| scene.occluded(x) && f.data()[y * scene.width + x] == 0.3);
        let expected = intervals.iter().any(|&(s, e)| (s..=e).contains(&i));
        assert_eq!(covered, expected, "frame {i}");
    }
}

#[test]
fn empty_trajectory_is_an_error() {
    let mut scene = Scene::bridge();
    scene.keyframes.clear();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::car(16, 24).unwrap();
    assert!(render_sequence(&scene, &obj, &tex).is_err());
}

#[test]
fn scene_json_round_trip_and_rejects_unknown_keys() {
    let scene = Scene::bridge();
    let text = serde_json::to_string(&scene).unwrap();
    let back: Scene = serde_json::from_str(&text).unwrap();
    assert_eq!(back, scene);
    let bad = text.replacen("\"frames\"", "\"bogus\":1,\"frames\"", 1);
    assert!(serde_json::from_str::<Scene>(&bad).is_err());
}

#[test]
fn trajectory_interpolates_keyframes() {
    let traj = Scene::bridge().trajectory();
    assert_eq!(traj.len(), 60);
    assert_eq!(traj[0].center, [24.0, 48.0]);
    assert_eq!(traj[59].center, [232.0, 48.0]);
    let step = (232.0 - 24.0) / 59.0;
    assert!((traj[10].center[0] - (24.0 + 10.0 * step)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn rendered_pixels_stay_in_unit_range(
        scale in 0.5f64..2.0, rot in -1.0f64..1.0, shear in -0.5f64..0.5,
        tx in -10.0f64..10.0, ty in -10.0f64..10.0, gain in 0.0f64..3.0,
    ) {
        let tex = TextureMap::car(16, 24).unwrap();
        let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
        let view = ViewParams { scale, rotation: rot, shear, translation: [tx, ty], gain, ..ViewParams::default() };
        let img = render_image(&obj, &tex, &view, Canvas::new(48, 48)).unwrap();
        prop_assert!(img.min() >= 0.0 && img.max() <= 1.0);
    }
}
