use serde::{Deserialize, Serialize};

use super::eot::SampledView;
use crate::autodiff::{Record, Tensor, Var};
use crate::error::{Error, Result};
use crate::renderer::{render, target_box, Canvas, PlanarObject};
use crate::siamese::{EmbedderVars, Head, HeadKind, Victim};
use crate::tracker::{crop_and_scale, crop_spec_for, visible_map, CosineWindow, CropRole};

/// Which symmetric-head response the attack minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// The score-map cell where exemplar and search are aligned.
    #[default]
    CenterAligned,
    /// The largest value anywhere in the score map.
    GlobalMax,
}

/// One EOT draw. Normally both Siamese inputs come from a single rendered
/// image; `Independent` renders exemplar and search from separate views.
#[derive(Clone, Debug, PartialEq)]
pub enum EotSample {
    Shared(SampledView),
    Independent(SampledView, SampledView),
}

/// Fixed rendering context of an attack.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackStage {
    pub object: PlanarObject,
    pub canvas: Canvas,
    pub mode: ScoreMode,
}

fn render_crop(
    rec: &mut Record,
    victim: &Victim,
    stage: &AttackStage,
    texture: Var,
    view: &SampledView,
    role: CropRole,
) -> Result<Var> {
    let img = render(
        rec,
        &stage.object,
        texture,
        &view.params,
        stage.canvas,
        view.occluder.as_ref(),
    )?;
    let bbox = target_box(&stage.object, &view.params, stage.canvas)?;
    crop_and_scale(rec, img, &bbox, role, &crop_spec_for(victim))
}

/// Exemplar and search crops of one EOT draw.
pub fn sample_crops(
    rec: &mut Record,
    victim: &Victim,
    stage: &AttackStage,
    texture: Var,
    sample: &EotSample,
) -> Result<(Var, Var)> {
    match sample {
        EotSample::Shared(view) => {
            let img = render(
                rec,
                &stage.object,
                texture,
                &view.params,
                stage.canvas,
                view.occluder.as_ref(),
            )?;
            let bbox = target_box(&stage.object, &view.params, stage.canvas)?;
            let spec = crop_spec_for(victim);
            let z = crop_and_scale(rec, img, &bbox, CropRole::Exemplar, &spec)?;
            let x = crop_and_scale(rec, img, &bbox, CropRole::Search, &spec)?;
            Ok((z, x))
        }
        EotSample::Independent(zv, xv) => {
            let z = render_crop(rec, victim, stage, texture, zv, CropRole::Exemplar)?;
            let x = render_crop(rec, victim, stage, texture, xv, CropRole::Search)?;
            Ok((z, x))
        }
    }
}

/// Per-draw attack objective without the L2 term: the self-similarity
/// score (symmetric) or the all-background cross-entropy (RPN).
pub fn view_loss(
    rec: &mut Record,
    victim: &Victim,
    vars: &EmbedderVars,
    stage: &AttackStage,
    texture: Var,
    sample: &EotSample,
) -> Result<Var> {
    let (z, x) = sample_crops(rec, victim, stage, texture, sample)?;
    let zf = victim.embedder.embed(rec, vars, z)?;
    let xf = victim.embedder.embed(rec, vars, x)?;
    match &victim.head {
        Head::Symmetric(h) => {
            let map = h.score(rec, zf, xf)?;
            let m = rec.shape(map)[0];
            let flat = rec.reshape(map, vec![m * m])?;
            match stage.mode {
                ScoreMode::CenterAligned => {
                    let mid = (m - 1) / 2;
                    let g = rec.gather(flat, vec![mid * m + mid])?;
                    rec.reshape(g, vec![])
                }
                ScoreMode::GlobalMax => rec.max(flat),
            }
        }
        Head::Rpn(h) => {
            let logits = h.logits(rec, zf, xf)?;
            let rows = h.anchor_rows(rec, logits)?;
            let n = rec.shape(rows)[0];
            rec.softmax_cross_entropy(rows, &vec![0; n])
        }
    }
}

/// `lambda * ||texture - original||_2` on the record.
pub fn l2_term(rec: &mut Record, texture: Var, original: &Tensor, lambda: f64) -> Result<Var> {
    let o = rec.constant(original.clone());
    let d = rec.sub(texture, o)?;
    let sq = rec.square(d);
    let s = rec.sum(sq);
    let n = rec.sqrt(s);
    Ok(rec.scale(n, lambda))
}

fn sta_loss(
    rec: &mut Record,
    victim: &Victim,
    stage: &AttackStage,
    texture: Var,
    samples: &[EotSample],
    lambda: f64,
    original: &Tensor,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::arg("need at least one EOT sample"));
    }
    let vars = victim.embedder.register(rec);
    let mut total: Option<Var> = None;
    for s in samples {
        let l = view_loss(rec, victim, &vars, stage, texture, s)?;
        total = Some(match total {
            Some(t) => rec.add(t, l)?,
            None => l,
        });
    }
    let mean = rec.scale(total.expect("non-empty"), 1.0 / samples.len() as f64);
    let reg = l2_term(rec, texture, original, lambda)?;
    rec.add(mean, reg)
}

/// Mean self-similarity over the draws plus the L2 perceptibility term.
pub fn sta_loss_symmetric(
    rec: &mut Record,
    victim: &Victim,
    stage: &AttackStage,
    texture: Var,
    samples: &[EotSample],
    lambda: f64,
    original: &Tensor,
) -> Result<Var> {
    if victim.kind() != HeadKind::Symmetric {
        return Err(Error::arg("symmetric loss needs a symmetric victim"));
    }
    sta_loss(rec, victim, stage, texture, samples, lambda, original)
}

/// Mean all-background cross-entropy over the draws plus the L2 term.
pub fn sta_loss_rpn(
    rec: &mut Record,
    victim: &Victim,
    stage: &AttackStage,
    texture: Var,
    samples: &[EotSample],
    lambda: f64,
    original: &Tensor,
) -> Result<Var> {
    if victim.kind() != HeadKind::Rpn {
        return Err(Error::arg("rpn loss needs an rpn victim"));
    }
    sta_loss(rec, victim, stage, texture, samples, lambda, original)
}

/// Target score of one draw, forward only: the centre-aligned
/// self-similarity (symmetric) or the best anchor's foreground probability
/// at the centre cell (RPN).
pub fn target_score(
    victim: &Victim,
    stage: &AttackStage,
    texture: &Tensor,
    sample: &EotSample,
) -> Result<f64> {
    Ok(centre(&forward_response(victim, stage, texture, sample)?))
}

/// Target score as the tracker sees it: the centre cell of the map that is
/// blended with the cosine window (see `visible_map`).
pub fn visible_target_score(
    victim: &Victim,
    stage: &AttackStage,
    texture: &Tensor,
    sample: &EotSample,
    window: &CosineWindow,
) -> Result<f64> {
    let resp = forward_response(victim, stage, texture, sample)?;
    Ok(centre(&visible_map(victim.kind(), &resp, window.mass())))
}

fn forward_response(
    victim: &Victim,
    stage: &AttackStage,
    texture: &Tensor,
    sample: &EotSample,
) -> Result<Tensor> {
    let mut rec = Record::new();
    let t = rec.constant(texture.clone());
    let (z, x) = sample_crops(&mut rec, victim, stage, t, sample)?;
    let zf = victim.embedder.features(rec.value(z))?;
    victim.response(&zf, rec.value(x))
}

fn centre(map: &Tensor) -> f64 {
    let m = map.shape()[0];
    let mid = (m - 1) / 2;
    map.data()[mid * m + mid]
}
