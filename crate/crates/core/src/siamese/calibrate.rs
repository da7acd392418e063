use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{Head, Victim};
use crate::autodiff::{Record, Tensor};
use crate::error::{Error, Result};
use crate::renderer::{render_sequence, PlanarObject, Scene, TextureMap};
use crate::tracker::track;

pub const CALIBRATION_MIN_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub victim: String,
    pub mean_iou: f64,
    pub threshold: f64,
    pub passed: bool,
    pub per_frame_iou: Vec<f64>,
}

/// Track the clean-texture scene and check the victim is a working
/// tracker. A failed gate is reported, not raised.
pub fn calibrate_tracker(
    victim: &Victim,
    scene: &Scene,
    object: &PlanarObject,
    texture: &TextureMap,
    penalty: f64,
) -> Result<CalibrationReport> {
    let (frames, boxes) = render_sequence(scene, object, texture)?;
    let points = track(victim, &frames, boxes[0], penalty)?;
    let per_frame_iou: Vec<f64> = points
        .iter()
        .zip(&boxes)
        .map(|(p, g)| p.bbox().iou(g))
        .collect();
    let mean_iou = per_frame_iou.iter().sum::<f64>() / per_frame_iou.len() as f64;
    Ok(CalibrationReport {
        victim: victim.name.clone(),
        mean_iou,
        threshold: CALIBRATION_MIN_IOU,
        passed: mean_iou >= CALIBRATION_MIN_IOU,
        per_frame_iou,
    })
}

/// Optional logistic fine-tuning on synthetic exemplar/search pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub pairs_per_iteration: usize,
    /// Cells within this distance of the true offset are positives.
    pub positive_radius: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            iterations: 50,
            learning_rate: 0.05,
            pairs_per_iteration: 4,
            positive_radius: 1.0,
            seed: 0,
        }
    }
}

/// A random textured patch on a random flat background, shown centred in
/// the exemplar and shifted by whole cells in the search image.
fn synthetic_pair(
    victim: &Victim,
    rng: &mut ChaCha8Rng,
    m: usize,
) -> Result<(Tensor, Tensor, usize, usize)> {
    let g = victim.geometry();
    let (ez, sz) = (g.exemplar_size, g.search_size);
    let stride = g.total_stride();
    let mid = (m - 1) / 2;
    let reach = (mid * stride).min((sz - ez) / 2);
    let max_shift = reach / stride;
    let row = mid + rng.gen_range(0..=2 * max_shift) - max_shift;
    let col = mid + rng.gen_range(0..=2 * max_shift) - max_shift;
    let bg: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let (ph, pw) = (ez / 2, ez * 3 / 4);
    let patch: Vec<f64> = (0..3 * ph * pw).map(|_| rng.gen()).collect();
    let draw = |size: usize, oy: isize, ox: isize| {
        let mut t = Tensor::zeros(vec![3, size, size]);
        let plane = size * size;
        for c in 0..3 {
            t.data_mut()[c * plane..(c + 1) * plane].fill(bg[c]);
            for y in 0..ph {
                for x in 0..pw {
                    let (yy, xx) = (oy + y as isize, ox + x as isize);
                    if yy >= 0 && xx >= 0 && (yy as usize) < size && (xx as usize) < size {
                        t.data_mut()[c * plane + yy as usize * size + xx as usize] =
                            patch[c * ph * pw + y * pw + x];
                    }
                }
            }
        }
        t
    };
    let z = draw(ez, ((ez - ph) / 2) as isize, ((ez - pw) / 2) as isize);
    let shift = |cell: usize| (cell as isize - mid as isize) * stride as isize;
    let x = draw(
        sz,
        ((sz - ph) / 2) as isize + shift(row),
        ((sz - pw) / 2) as isize + shift(col),
    );
    Ok((z, x, row, col))
}

/// Fine-tune the embedder (and RPN adjust convs) with a per-cell logistic
/// loss. Returns the loss trace.
pub fn finetune(victim: &mut Victim, cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    if cfg.learning_rate <= 0.0 || cfg.pairs_per_iteration == 0 {
        return Err(Error::arg(
            "fine-tuning needs a positive learning rate and batch",
        ));
    }
    let m = victim.map_size()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rec = Record::new();
        let vars = victim.embedder.register_params(&mut rec);
        let rpn_vars = match &victim.head {
            Head::Rpn(h) => Some((
                rec.param(h.template_adjust.clone()),
                rec.param(h.search_adjust.clone()),
            )),
            Head::Symmetric(_) => None,
        };
        let mut losses = Vec::new();
        for _ in 0..cfg.pairs_per_iteration {
            let (z, x, row, col) = synthetic_pair(victim, &mut rng, m)?;
            let zv = rec.constant(z);
            let xv = rec.constant(x);
            let zf = victim.embedder.embed(&mut rec, &vars, zv)?;
            let xf = victim.embedder.embed(&mut rec, &vars, xv)?;
            let label = |p: usize| {
                let (r, c) = ((p / m) as f64, (p % m) as f64);
                usize::from(
                    ((r - row as f64).powi(2) + (c - col as f64).powi(2)).sqrt()
                        <= cfg.positive_radius,
                )
            };
            let loss = match (&victim.head, rpn_vars) {
                (Head::Symmetric(h), _) => {
                    let map = h.score(&mut rec, zf, xf)?;
                    let flat = rec.reshape(map, vec![1, m * m])?;
                    let idx = (0..m * m).map(|p| 2 * p + 1).collect();
                    let rows = rec.place(&Tensor::zeros(vec![1, m * m, 2]), flat, idx)?;
                    let rows = rec.reshape(rows, vec![m * m, 2])?;
                    let labels: Vec<usize> = (0..m * m).map(label).collect();
                    rec.softmax_cross_entropy(rows, &labels)?
                }
                (Head::Rpn(h), Some((ta, sa))) => {
                    let logits = h.logits_with(&mut rec, ta, sa, zf, xf)?;
                    let rows = h.anchor_rows(&mut rec, logits)?;
                    let labels: Vec<usize> =
                        (0..h.k()).flat_map(|_| (0..m * m).map(label)).collect();
                    rec.softmax_cross_entropy(rows, &labels)?
                }
                (Head::Rpn(_), None) => unreachable!("rpn vars registered above"),
            };
            losses.push(loss);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = rec.add(total, l)?;
        }
        let total = rec.scale(total, 1.0 / losses.len() as f64);
        let value = rec.value(total).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteGradient {
                iteration: it,
                detail: "fine-tuning loss is not finite".into(),
            });
        }
        trace.push(value);
        let grads = rec.backward(total)?;
        let step = |t: &mut Tensor, v| -> Result<()> {
            let g = grads.get(v).ok_or_else(|| Error::arg("missing gradient"))?;
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    iteration: it,
                    detail: "fine-tuning gradient".into(),
                });
            }
            for (w, d) in t.data_mut().iter_mut().zip(g.data()) {
                *w -= cfg.learning_rate * d;
            }
            Ok(())
        };
        for (k, &v) in victim.embedder.kernels.iter_mut().zip(vars.kernels()) {
            step(k, v)?;
        }
        if let (Head::Rpn(h), Some((ta, sa))) = (&mut victim.head, rpn_vars) {
            step(&mut h.template_adjust, ta)?;
            step(&mut h.search_adjust, sa)?;
        }
    }
    Ok(trace)
}
