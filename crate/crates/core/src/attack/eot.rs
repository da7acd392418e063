use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::{SyntheticOccluder, ViewParams};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn fixed(v: f64) -> Self {
        Range { low: v, high: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low > self.high {
            return Err(Error::arg(format!(
                "{name} range [{}, {}] is invalid",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            // consume a draw so sequences stay aligned across ranges
            let _: f64 = rng.gen();
            return self.low;
        }
        self.low + (self.high - self.low) * rng.gen::<f64>()
    }
}

/// Distribution P over viewing conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EotDistribution {
    pub scale: Range,
    /// Radians.
    pub rotation: Range,
    pub shear: Range,
    /// Pixels, both axes.
    pub translation: Range,
    pub gain: Range,
    /// Background grey level; `background_tint` adds per-channel jitter.
    pub background: Range,
    pub background_tint: Range,
    /// Chance that a view carries the synthetic occluder bar.
    pub occluder_probability: f64,
    pub occluder_phase: Range,
    pub occluder: SyntheticOccluder,
}

impl Default for EotDistribution {
    fn default() -> Self {
        EotDistribution {
            scale: Range::new(0.85, 1.15),
            rotation: Range::new(-0.1, 0.1),
            shear: Range::new(-0.1, 0.1),
            translation: Range::new(-2.0, 2.0),
            gain: Range::new(0.8, 1.2),
            background: Range::new(0.3, 0.8),
            background_tint: Range::new(-0.05, 0.05),
            occluder_probability: 0.5,
            occluder_phase: Range::new(0.0, 1.0),
            occluder: SyntheticOccluder {
                width: 4.0,
                color: [0.3, 0.3, 0.3],
            },
        }
    }
}

/// One sampled view: parameters plus the occluder, when drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledView {
    pub params: ViewParams,
    pub occluder: Option<SyntheticOccluder>,
}

impl EotDistribution {
    pub fn validate(&self) -> Result<()> {
        self.scale.validate("scale")?;
        self.rotation.validate("rotation")?;
        self.shear.validate("shear")?;
        self.translation.validate("translation")?;
        self.gain.validate("gain")?;
        self.background.validate("background")?;
        self.background_tint.validate("background_tint")?;
        self.occluder_phase.validate("occluder_phase")?;
        if self.scale.low <= 0.0 {
            return Err(Error::arg("scale range must be positive"));
        }
        if self.gain.low <= 0.0 {
            return Err(Error::arg("gain range must be positive"));
        }
        let lo = self.background.low + self.background_tint.low;
        let hi = self.background.high + self.background_tint.high;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::arg("background plus tint must stay inside [0, 1]"));
        }
        if self.occluder_phase.low < 0.0 || self.occluder_phase.high > 1.0 {
            return Err(Error::arg("occluder phase range must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.occluder_probability) {
            return Err(Error::arg("occluder probability outside [0, 1]"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> SampledView {
        let scale = self.scale.sample(rng);
        let rotation = self.rotation.sample(rng);
        let shear = self.shear.sample(rng);
        let tx = self.translation.sample(rng);
        let ty = self.translation.sample(rng);
        let gain = self.gain.sample(rng);
        let grey = self.background.sample(rng);
        let background =
            [0, 1, 2].map(|_| (grey + self.background_tint.sample(rng)).clamp(0.0, 1.0));
        let occluder_phase = self.occluder_phase.sample(rng);
        let occluded = rng.gen::<f64>() < self.occluder_probability;
        SampledView {
            params: ViewParams {
                scale,
                rotation,
                shear,
                translation: [tx, ty],
                gain,
                background,
                occluder_phase,
            },
            occluder: occluded.then(|| self.occluder.clone()),
        }
    }
}

/// `k` independent views.
pub fn sample_views(
    dist: &EotDistribution,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SampledView>> {
    if k == 0 {
        return Err(Error::arg("need at least one view"));
    }
    dist.validate()?;
    Ok((0..k).map(|_| dist.sample(rng)).collect())
}
