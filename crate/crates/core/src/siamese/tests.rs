use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embedder::calibration_images;
use super::*;
use crate::autodiff::gradcheck::{check, worst};
use crate::autodiff::{Record, Tensor};
use crate::renderer::{
    render, render_image, target_box, Background, Canvas, Keyframe, PlanarObject, Scene,
    TextureMap, ViewParams,
};
use crate::tracker::{crop_and_scale, crop_image, CropRole, CropSpec};

fn random_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![3, size, size],
        (0..3 * size * size).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}

/// Clean car on a grey canvas with exemplar and search crops around it.
fn clean_crops() -> (Tensor, Tensor) {
    let tex = TextureMap::car(16, 24).unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let canvas = Canvas::new(128, 96);
    let view = ViewParams {
        translation: [3.0, -2.0],
        background: [0.55, 0.55, 0.55],
        ..ViewParams::default()
    };
    let img = render_image(&obj, &tex, &view, canvas).unwrap();
    let b = target_box(&obj, &view, canvas).unwrap();
    let spec = CropSpec::default();
    (
        crop_image(&img, &b, CropRole::Exemplar, &spec).unwrap(),
        crop_image(&img, &b, CropRole::Search, &spec).unwrap(),
    )
}

#[test]
fn zero_image_gives_zero_features() {
    let e = Embedder::init(1, NetGeometry::default()).unwrap();
    for size in [32, 64] {
        let f = e.features(&Tensor::zeros(vec![3, size, size])).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn flat_colour_gives_zero_features() {
    let e = Embedder::init(4, NetGeometry::default()).unwrap();
    let f = e.features(&Tensor::full(vec![3, 32, 32], 0.6)).unwrap();
    assert!(f.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn feature_shapes_follow_conv_arithmetic() {
    let g = NetGeometry::default();
    let e = Embedder::init(1, g.clone()).unwrap();
    let fz = e.features(&random_image(32, 1)).unwrap();
    let fx = e.features(&random_image(64, 2)).unwrap();
    // (32 - 3) / 2 + 1 = 15, then two valid 3x3 convs
    assert_eq!(fz.shape(), &[16, 11, 11]);
    assert_eq!(fx.shape(), &[16, 27, 27]);
    assert_eq!(g.feature_size(32).unwrap(), 11);
    assert_eq!(g.total_stride(), 2);
    assert!(e.features(&random_image(40, 3)).is_err());
    let v = VictimSpec::symmetric("s", 1).build().unwrap();
    assert_eq!(v.map_size().unwrap(), 17);
    let r = VictimSpec::rpn("r", 1).build().unwrap();
    assert_eq!(r.map_size().unwrap(), 17);
}

#[test]
fn weights_are_deterministic_per_seed() {
    let a = Embedder::init(9, NetGeometry::default()).unwrap();
    let b = Embedder::init(9, NetGeometry::default()).unwrap();
    let c = Embedder::init(10, NetGeometry::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.kernels, c.kernels);
    let img = random_image(64, 5);
    let fa = a.features(&img).unwrap();
    let fb = b.features(&img).unwrap();
    assert!(fa
        .data()
        .iter()
        .zip(fb.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    let ra = VictimSpec::rpn("r", 3).build().unwrap();
    let rb = VictimSpec::rpn("r", 3).build().unwrap();
    let rc = VictimSpec::rpn("r", 4).build().unwrap();
    assert_eq!(ra, rb);
    assert_ne!(ra.head, rc.head);
}

#[test]
fn activation_rms_in_unit_range() {
    let e = Embedder::init(2, NetGeometry::default()).unwrap();
    // fresh images, not the calibration set
    let imgs: Vec<Tensor> = (0..100).map(|i| random_image(64, 1000 + i)).collect();
    for layer in 0..e.kernels.len() {
        let rms = e.layer_rms(&imgs, layer).unwrap();
        assert!((0.1..=10.0).contains(&rms), "layer {layer} rms {rms}");
    }
    let cal = calibration_images(2, 64, 100);
    let last = e.layer_rms(&cal, e.kernels.len() - 1).unwrap();
    assert!((last - 1.0).abs() < 1e-9);
}

#[test]
fn argmax_at_copy_location() {
    let v = VictimSpec::symmetric("s", 1).build().unwrap();
    let z = random_image(32, 77);
    for (r, c) in [(8, 8), (3, 12), (14, 1), (0, 16)] {
        let mut x = Tensor::zeros(vec![3, 64, 64]);
        for ch in 0..3 {
            for i in 0..32 {
                for j in 0..32 {
                    x.data_mut()[ch * 4096 + (2 * r + i) * 64 + 2 * c + j] =
                        z.data()[ch * 1024 + i * 32 + j];
                }
            }
        }
        let map = v.symmetric_score(&z, &x).unwrap();
        assert_eq!(map.shape(), &[17, 17]);
        // brute-force scan of every placement
        let best = (0..289)
            .max_by(|&a, &b| map.data()[a].total_cmp(&map.data()[b]))
            .unwrap();
        assert_eq!((best / 17, best % 17), (r, c));
        assert_eq!(map.argmax(), r * 17 + c);
    }
}

#[test]
fn zero_exemplar_gives_zero_map() {
    let v = VictimSpec::symmetric("s", 1).build().unwrap();
    let map = v
        .symmetric_score(&Tensor::zeros(vec![3, 32, 32]), &random_image(64, 1))
        .unwrap();
    assert!(map.data().iter().all(|&s| s == 0.0));
}

#[test]
fn clean_self_score_peaks_at_center() {
    let (z, x) = clean_crops();
    for seed in 1..=3 {
        let v = VictimSpec::symmetric("s", seed).build().unwrap();
        let map = v.symmetric_score(&z, &x).unwrap();
        let mid = 8 * 17 + 8;
        let center = map.data()[mid];
        assert!(center > 0.0);
        for (i, &s) in map.data().iter().enumerate() {
            assert!(
                i == mid || s <= center,
                "seed {seed} cell {i}: {s} > {center}"
            );
        }
        // both branches share one embedder: swapping identical inputs is symmetric
        let zz = v.symmetric_score(&z, &z).unwrap();
        assert_eq!(zz.shape(), &[1, 1]);
        let e = v.embedder.features(&z).unwrap();
        let energy: f64 = e.data().iter().map(|a| a * a).sum::<f64>() / e.len() as f64;
        assert!((zz.item() - energy).abs() < 1e-12 * energy.max(1.0));
    }
}

#[test]
fn zero_adjust_weights_give_uniform_probabilities() {
    let mut spec = VictimSpec::rpn("r", 1);
    spec.rpn.fg_bias = 0.0;
    let mut v = spec.build().unwrap();
    if let Head::Rpn(h) = &mut v.head {
        h.template_adjust = h.template_adjust.map(|_| 0.0);
        h.search_adjust = h.search_adjust.map(|_| 0.0);
    }
    let (z, x) = clean_crops();
    let logits = v.rpn_cls_logits(&z, &x).unwrap();
    assert!(logits.data().iter().all(|&l| l == 0.0));
    let zf = v.embedder.features(&z).unwrap();
    let p = v.response(&zf, &x).unwrap();
    assert!(p.data().iter().all(|&q| q == 0.5));
}

#[test]
fn logit_extents() {
    let v = VictimSpec::rpn("r", 1).build().unwrap();
    let (z, x) = clean_crops();
    let l = v.rpn_cls_logits(&z, &x).unwrap();
    assert_eq!(l.shape(), &[6, 17, 17]);
    let Head::Rpn(h) = &v.head else {
        unreachable!()
    };
    assert_eq!(h.k(), 3);
    assert!(v.symmetric_score(&z, &x).is_err());
    let s = VictimSpec::symmetric("s", 1).build().unwrap();
    assert!(s.rpn_cls_logits(&z, &x).is_err());
}

#[test]
fn rpn_adjust_weights_are_distinct() {
    let v = VictimSpec::rpn("r", 1).build().unwrap();
    let Head::Rpn(h) = &v.head else {
        unreachable!()
    };
    assert_ne!(h.template_adjust.shape(), h.search_adjust.shape());
    let k = h.k();
    let a = h.search_adjust.shape()[0];
    // each foreground kernel block differs from the search adjust weights
    let block = h.search_adjust.len();
    for b in k..2 * k {
        let t = &h.template_adjust.data()[b * block..(b + 1) * block];
        assert!(t.iter().zip(h.search_adjust.data()).any(|(x, y)| x != y));
    }
    assert_eq!(h.template_adjust.shape()[0], 2 * k * a);
    let mut w = h.clone();
    w.template_adjust = w.template_adjust.map(|t| t + 1.0);
    assert_eq!(w.search_adjust, h.search_adjust);
}

#[test]
fn rpn_fg_logit_gradient_matches_finite_differences() {
    let v = VictimSpec::rpn("r", 2).build().unwrap();
    let Head::Rpn(h) = &v.head else {
        unreachable!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tex = Tensor::new(
        vec![3, 16, 24],
        (0..3 * 16 * 24).map(|_| rng.gen_range(0.1..0.9)).collect(),
    )
    .unwrap();
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let canvas = Canvas::new(96, 64);
    let view = ViewParams {
        scale: 1.07,
        rotation: 0.05,
        translation: [1.3, -0.6],
        background: [0.5, 0.45, 0.6],
        ..ViewParams::default()
    };
    let bbox = target_box(&obj, &view, canvas).unwrap();
    let spec = CropSpec::default();
    let loss = |rec: &mut Record, t| {
        let img = render(rec, &obj, t, &view, canvas, None).unwrap();
        let z = crop_and_scale(rec, img, &bbox, CropRole::Exemplar, &spec).unwrap();
        let x = crop_and_scale(rec, img, &bbox, CropRole::Search, &spec).unwrap();
        let vars = v.embedder.register(rec);
        let zf = v.embedder.embed(rec, &vars, z).unwrap();
        let xf = v.embedder.embed(rec, &vars, x).unwrap();
        let l = h.logits(rec, zf, xf).unwrap();
        let k = h.k();
        let flat = rec.reshape(l, vec![2 * k * 289]).unwrap();
        let fg = rec.gather(flat, (k * 289..2 * k * 289).collect()).unwrap();
        rec.mean(fg)
    };
    let mut rec = Record::new();
    let t = rec.param(tex.clone());
    let l = loss(&mut rec, t);
    let analytic = rec.backward(l).unwrap().get(t).unwrap().clone();
    let f = |x: &Tensor| {
        let mut r = Record::new();
        let t = r.param(x.clone());
        let l = loss(&mut r, t);
        r.value(l).item()
    };
    let idx: Vec<usize> = (0..tex.len()).step_by(11).collect();
    let checks = check(f, &tex, &analytic, &idx, 1e-5, 1e-7);
    let w = worst(&checks).unwrap();
    assert!(w.rel_err <= 1e-4, "{w:?}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for v in [
        VictimSpec::symmetric("s", 5).build().unwrap(),
        VictimSpec::rpn("r", 6).build().unwrap(),
    ] {
        let path = dir.path().join(format!("{}.bin", v.name));
        save_victim(&v, &path).unwrap();
        assert!(manifest_path(&path).exists());
        let back = load_victim(&path).unwrap();
        assert_eq!(back, v);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let tensors = read_weights(&path).unwrap();
        let expected = v.embedder.kernels.len() + usize::from(v.kind() == HeadKind::Rpn) * 2;
        assert_eq!(tensors.len(), expected);

        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(read_weights(&path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(read_weights(&path).is_err());
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_weights(&path).is_err());
    }
}

fn static_scene(background: [f64; 3]) -> Scene {
    Scene {
        width: 128,
        height: 96,
        frames: 6,
        background: Background::Solid { color: background },
        occluders: Vec::new(),
        keyframes: vec![Keyframe {
            frame: 0,
            center: [64.0, 48.0],
            scale: 1.0,
        }],
    }
}

#[test]
fn static_scene_tracks_perfectly() {
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::car(16, 24).unwrap();
    for v in [
        VictimSpec::symmetric("s", 1).build().unwrap(),
        VictimSpec::rpn("r", 2).build().unwrap(),
    ] {
        let r = calibrate_tracker(&v, &static_scene([0.55; 3]), &obj, &tex, 0.3).unwrap();
        assert!(r.per_frame_iou.iter().all(|&i| i == 1.0));
        assert!(r.passed);
    }
}

#[test]
fn black_on_black_fails_calibration() {
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::solid(16, 24, [0.0; 3]).unwrap();
    let scene = Scene {
        background: Background::Solid { color: [0.0; 3] },
        ..Scene::bridge()
    };
    let v = VictimSpec::symmetric("s", 1).build().unwrap();
    let r = calibrate_tracker(&v, &scene, &obj, &tex, 0.3).unwrap();
    assert!(!r.passed);
    assert_eq!(r.per_frame_iou.len(), 60);
}

#[test]
fn default_scene_calibrates() {
    let obj = PlanarObject::rectangle(24.0, 16.0).unwrap();
    let tex = TextureMap::car(16, 24).unwrap();
    for v in [
        VictimSpec::symmetric("s", 1).build().unwrap(),
        VictimSpec::rpn("r", 2).build().unwrap(),
    ] {
        let r = calibrate_tracker(&v, &Scene::bridge(), &obj, &tex, 0.3).unwrap();
        assert!(r.passed, "{} mean IOU {}", v.name, r.mean_iou);
        assert!(r.mean_iou >= CALIBRATION_MIN_IOU);
    }
}

#[test]
fn finetune_runs_and_updates_weights() {
    for spec in [VictimSpec::symmetric("s", 1), VictimSpec::rpn("r", 2)] {
        let mut v = spec.build().unwrap();
        let before = v.clone();
        let cfg = FinetuneConfig {
            iterations: 3,
            pairs_per_iteration: 2,
            ..FinetuneConfig::default()
        };
        let trace = finetune(&mut v, &cfg).unwrap();
        assert_eq!(trace.len(), 3);
        assert!(trace.iter().all(|l| l.is_finite() && *l > 0.0));
        assert_ne!(v.embedder.kernels, before.embedder.kernels);
        let again = {
            let mut w = before.clone();
            finetune(&mut w, &cfg).unwrap();
            w
        };
        assert_eq!(again, v);
    }
    let mut v = VictimSpec::symmetric("s", 1).build().unwrap();
    let bad = FinetuneConfig {
        learning_rate: 0.0,
        ..FinetuneConfig::default()
    };
    assert!(finetune(&mut v, &bad).is_err());
}
