use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eot::{sample_views, EotDistribution};
use super::loss::{
    target_score, view_loss, visible_target_score, AttackStage, EotSample, ScoreMode,
};
use crate::autodiff::{Record, Tensor};
use crate::error::{Error, Result};
use crate::renderer::{Canvas, PlanarObject, TextureMap};
use crate::siamese::{HeadKind, Victim};
use crate::tracker::CosineWindow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Weight of the L2 distance to the clean texture.
    pub lambda: f64,
    pub step_size: f64,
    /// Step multiplier per outer round of the combined attack.
    pub step_decay: f64,
    pub iterations: usize,
    /// EOT draws per iteration.
    pub eot_samples: usize,
    pub seed: u64,
    /// Expected victim head; checked when set.
    pub head: Option<HeadKind>,
    /// Render exemplar and search from separate views.
    pub independent_views: bool,
    pub score_mode: ScoreMode,
    /// Outer rounds of the combined attack.
    pub rounds: usize,
    /// Canvas `[width, height]` the target is rendered on.
    pub canvas: [usize; 2],
    pub eot: EotDistribution,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            lambda: 1e-4,
            step_size: 10.0,
            step_decay: 0.5,
            iterations: 200,
            eot_samples: 8,
            seed: 0,
            head: None,
            independent_views: false,
            score_mode: ScoreMode::CenterAligned,
            rounds: 3,
            canvas: [128, 128],
            eot: EotDistribution::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.eot_samples == 0 {
            return Err(Error::arg("iterations and eot_samples must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg("lambda must be non-negative"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("step size must be non-negative"));
        }
        if !(self.step_decay > 0.0 && self.step_decay.is_finite()) {
            return Err(Error::arg("step decay must be positive"));
        }
        if self.canvas[0] == 0 || self.canvas[1] == 0 {
            return Err(Error::arg("canvas must be non-empty"));
        }
        self.eot.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: AttackConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn stage(&self, object: &PlanarObject) -> AttackStage {
        AttackStage {
            object: object.clone(),
            canvas: Canvas::new(self.canvas[0], self.canvas[1]),
            mode: self.score_mode,
        }
    }

    /// Draw one iteration's EOT samples.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Vec<EotSample>> {
        if self.independent_views {
            let v = sample_views(&self.eot, 2 * self.eot_samples, rng)?;
            Ok(v.chunks_exact(2)
                .map(|p| EotSample::Independent(p[0].clone(), p[1].clone()))
                .collect())
        } else {
            Ok(sample_views(&self.eot, self.eot_samples, rng)?
                .into_iter()
                .map(EotSample::Shared)
                .collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub texture: TextureMap,
    /// Loss before each update.
    pub loss_trace: Vec<f64>,
    /// `||adversarial - clean||_2`.
    pub l2: f64,
}

impl AttackResult {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        write_loss_csv(&self.loss_trace, path)
    }
}

pub fn write_loss_csv(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// One projected gradient step: `texture - step * gradient`, clamped to
/// [0, 1].
pub fn pgd_step(texture: &TextureMap, gradient: &Tensor, step: f64) -> Result<TextureMap> {
    let t = texture.tensor();
    if t.shape() != gradient.shape() {
        return Err(Error::ShapeMismatch {
            left: t.shape().to_vec(),
            right: gradient.shape().to_vec(),
        });
    }
    let bad = gradient.data().iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteGradient {
            iteration: 0,
            detail: format!(
                "{bad} of {} gradient entries are not finite",
                gradient.len()
            ),
        });
    }
    let data = t
        .data()
        .iter()
        .zip(gradient.data())
        .map(|(v, g)| (v - step * g).clamp(0.0, 1.0))
        .collect();
    TextureMap::from_tensor(Tensor::new(t.shape().to_vec(), data)?)
}

/// Loss and texture gradient of the EOT objective at `texture`. Draws are
/// evaluated in parallel on separate records and summed in draw order.
pub fn loss_and_gradient(
    victim: &Victim,
    stage: &AttackStage,
    texture: &TextureMap,
    original: &TextureMap,
    samples: &[EotSample],
    lambda: f64,
) -> Result<(f64, Tensor)> {
    let parts: Vec<Result<(f64, Tensor)>> = samples
        .par_iter()
        .map(|s| {
            let mut rec = Record::new();
            let vars = victim.embedder.register(&mut rec);
            let t = rec.param(texture.tensor().clone());
            let l = view_loss(&mut rec, victim, &vars, stage, t, s)?;
            let value = rec.value(l).item();
            let mut g = rec.backward(l)?;
            let grad = g
                .take(t)
                .ok_or_else(|| Error::arg("texture received no gradient"))?;
            Ok((value, grad))
        })
        .collect();
    let k = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(texture.tensor().shape().to_vec());
    for p in parts {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    loss /= k;
    grad.data_mut().iter_mut().for_each(|v| *v /= k);
    let dist = texture.l2_distance(original)?;
    loss += lambda * dist;
    if dist > 0.0 {
        let (t, o) = (texture.tensor().data(), original.tensor().data());
        for ((g, a), b) in grad.data_mut().iter_mut().zip(t).zip(o) {
            *g += lambda * (a - b) / dist;
        }
    }
    Ok((loss, grad))
}

fn check_head(victim: &Victim, cfg: &AttackConfig) -> Result<()> {
    match cfg.head {
        Some(h) if h != victim.kind() => Err(Error::arg(format!(
            "config expects a {h:?} victim, got {:?}",
            victim.kind()
        ))),
        _ => Ok(()),
    }
}

/// Continue an attack from `start`, keeping the L2 anchor at `original`.
pub fn continue_sta(
    victim: &Victim,
    object: &PlanarObject,
    start: &TextureMap,
    original: &TextureMap,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_head(victim, cfg)?;
    let stage = cfg.stage(object);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut texture = start.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let samples = cfg.draw(&mut rng)?;
        let (loss, grad) =
            loss_and_gradient(victim, &stage, &texture, original, &samples, cfg.lambda)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient {
                iteration: it,
                detail: format!("loss is {loss}"),
            });
        }
        trace.push(loss);
        texture = pgd_step(&texture, &grad, cfg.step_size).map_err(|e| match e {
            Error::NonFiniteGradient { detail, .. } => Error::NonFiniteGradient {
                iteration: it,
                detail,
            },
            other => other,
        })?;
    }
    let l2 = texture.l2_distance(original)?;
    Ok(AttackResult {
        texture,
        loss_trace: trace,
        l2,
    })
}

/// Optimize an adversarial texture against one victim.
pub fn run_sta(
    victim: &Victim,
    object: &PlanarObject,
    texture: &TextureMap,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    continue_sta(victim, object, texture, texture, cfg)
}

/// Seed used for victim `index` in outer round `round` of a combined attack.
pub fn round_seed(seed: u64, round: usize, index: usize) -> u64 {
    seed.wrapping_add(((round as u64) << 32) | index as u64)
}

/// Attack several victims with one texture: each outer round runs the
/// configured iterations against every victim in turn, and the step size is
/// multiplied by `step_decay` after each round.
pub fn run_combined(
    victims: &[&Victim],
    object: &PlanarObject,
    texture: &TextureMap,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if victims.is_empty() {
        return Err(Error::arg("combined attack needs at least one victim"));
    }
    if cfg.rounds == 0 {
        return Err(Error::arg("combined attack needs at least one round"));
    }
    let mut current = texture.clone();
    let mut trace = Vec::new();
    let mut step = cfg.step_size;
    for round in 0..cfg.rounds {
        for (i, v) in victims.iter().enumerate() {
            let sub = AttackConfig {
                seed: round_seed(cfg.seed, round, i),
                step_size: step,
                head: None,
                ..cfg.clone()
            };
            let r = continue_sta(v, object, &current, texture, &sub)?;
            current = r.texture;
            trace.extend(r.loss_trace);
        }
        step *= cfg.step_decay;
    }
    let l2 = current.l2_distance(texture)?;
    Ok(AttackResult {
        texture: current,
        loss_trace: trace,
        l2,
    })
}

/// Mean target score over `count` seeded EOT draws.
pub fn mean_target_score(
    victim: &Victim,
    object: &PlanarObject,
    texture: &TextureMap,
    cfg: &AttackConfig,
    count: usize,
    seed: u64,
) -> Result<f64> {
    mean_over_draws(object, cfg, count, seed, |stage, s| {
        target_score(victim, stage, texture.tensor(), s)
    })
}

/// Mean tracker-visible target score over `count` seeded EOT draws, using
/// the window of a tracker with penalty weight `penalty`.
pub fn mean_visible_score(
    victim: &Victim,
    object: &PlanarObject,
    texture: &TextureMap,
    cfg: &AttackConfig,
    penalty: f64,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let window = CosineWindow::new(victim.map_size()?, penalty)?;
    mean_over_draws(object, cfg, count, seed, |stage, s| {
        visible_target_score(victim, stage, texture.tensor(), s, &window)
    })
}

fn mean_over_draws(
    object: &PlanarObject,
    cfg: &AttackConfig,
    count: usize,
    seed: u64,
    score: impl Fn(&AttackStage, &EotSample) -> Result<f64> + Sync,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::arg("score average needs at least one draw"));
    }
    let stage = cfg.stage(object);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = AttackConfig {
        eot_samples: count,
        ..cfg.clone()
    };
    let samples = draw.draw(&mut rng)?;
    let scores: Vec<Result<f64>> = samples.par_iter().map(|s| score(&stage, s)).collect();
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / count as f64)
}
