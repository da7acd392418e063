use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{sta_loss_rpn, sta_loss_symmetric, AttackStage, EotSample};
use super::run::AttackConfig;
use crate::autodiff::gradcheck::{check, worst};
use crate::autodiff::{Record, Tensor};
use crate::error::{Error, Result};
use crate::renderer::{PlanarObject, TextureMap};
use crate::siamese::{HeadKind, Victim};

/// Finite-difference step and relative-error floor of the pipeline check.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub victim: String,
    pub coordinates: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub worst_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn full_loss(
    victim: &Victim,
    stage: &AttackStage,
    texture: &Tensor,
    samples: &[EotSample],
    lambda: f64,
    original: &Tensor,
    with_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let mut rec = Record::new();
    let t = rec.param(texture.clone());
    let l = match victim.kind() {
        HeadKind::Symmetric => {
            sta_loss_symmetric(&mut rec, victim, stage, t, samples, lambda, original)?
        }
        HeadKind::Rpn => sta_loss_rpn(&mut rec, victim, stage, t, samples, lambda, original)?,
    };
    let value = rec.value(l).item();
    if !with_grad {
        return Ok((value, None));
    }
    let g = rec
        .backward(l)?
        .take(t)
        .ok_or_else(|| Error::arg("texture received no gradient"))?;
    Ok((value, Some(g)))
}

/// Compare the analytic texture gradient of the full attack loss (render,
/// crop, embed, head, loss) with central differences at `coords` random
/// texels. The L2 anchor is the inverted texture, which keeps the
/// regulariser away from its kink at zero distance.
pub fn pipeline_gradcheck(
    victim: &Victim,
    object: &PlanarObject,
    texture: &TextureMap,
    cfg: &AttackConfig,
    coords: usize,
    tolerance: f64,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let n = texture.tensor().len();
    if coords == 0 || coords > n {
        return Err(Error::arg(format!(
            "gradcheck needs 1..={n} coordinates, got {coords}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = cfg.draw(&mut rng)?;
    let mut indices = sample(&mut rng, n, coords).into_vec();
    indices.sort_unstable();
    let stage = cfg.stage(object);
    let original = texture.tensor().map(|v| 1.0 - v);
    let (_, grad) = full_loss(
        victim,
        &stage,
        texture.tensor(),
        &samples,
        cfg.lambda,
        &original,
        true,
    )?;
    let grad = grad.expect("gradient requested");
    let f = |x: &Tensor| {
        full_loss(victim, &stage, x, &samples, cfg.lambda, &original, false)
            .map(|(v, _)| v)
            .unwrap_or(f64::NAN)
    };
    let checks = check(
        f,
        texture.tensor(),
        &grad,
        &indices,
        GRADCHECK_STEP,
        GRADCHECK_FLOOR,
    );
    let w = worst(&checks).expect("at least one coordinate");
    let all_finite = checks.iter().all(|c| c.rel_err.is_finite());
    Ok(GradcheckReport {
        victim: victim.name.clone(),
        coordinates: checks.len(),
        worst_index: w.index,
        worst_analytic: w.analytic,
        worst_numeric: w.numeric,
        worst_rel_err: w.rel_err,
        tolerance,
        passed: all_finite && w.rel_err <= tolerance,
    })
}
