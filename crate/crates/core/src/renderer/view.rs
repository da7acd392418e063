use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar target geometry: a parallelogram given by its object-space corners
/// in the order top-left, top-right, bottom-right, bottom-left. The texture's
/// columns run along top-left→top-right and its rows along top-left→bottom-left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarObject {
    pub corners: [[f64; 2]; 4],
}

impl PlanarObject {
    pub fn new(corners: [[f64; 2]; 4]) -> Result<Self> {
        let o = PlanarObject { corners };
        o.validate()?;
        Ok(o)
    }

    /// Axis-aligned `width` x `height` rectangle centred on the origin.
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        let (hw, hh) = (width / 2.0, height / 2.0);
        Self::new([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    }

    pub fn validate(&self) -> Result<()> {
        let [tl, tr, br, bl] = self.corners;
        let e1 = [tr[0] - tl[0], tr[1] - tl[1]];
        let e2 = [bl[0] - tl[0], bl[1] - tl[1]];
        let area = e1[0] * e2[1] - e1[1] * e2[0];
        if !area.is_finite() || area.abs() < 1e-9 {
            return Err(Error::Degenerate(format!("quad area {area}")));
        }
        let expect = [tr[0] + e2[0], tr[1] + e2[1]];
        let scale = e1[0].hypot(e1[1]).max(e2[0].hypot(e2[1]));
        if (expect[0] - br[0]).hypot(expect[1] - br[1]) > 1e-9 * scale.max(1.0) {
            return Err(Error::Degenerate("quad is not a parallelogram".into()));
        }
        Ok(())
    }

    pub(crate) fn origin(&self) -> [f64; 2] {
        self.corners[0]
    }

    /// Edge vectors along texture columns (u) and rows (v).
    pub(crate) fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let [tl, tr, _, bl] = self.corners;
        (
            [tr[0] - tl[0], tr[1] - tl[1]],
            [bl[0] - tl[0], bl[1] - tl[1]],
        )
    }
}

/// One sample of viewing conditions.
///
/// The object is mapped to the canvas by scale, then horizontal shear, then
/// in-plane rotation, then translation relative to the canvas centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewParams {
    pub scale: f64,
    pub rotation: f64,
    pub shear: f64,
    pub translation: [f64; 2],
    pub gain: f64,
    pub background: [f64; 3],
    /// Horizontal position of a synthetic occluding bar across the target,
    /// as a fraction of the target's extent. Only drawn when the render
    /// options ask for an occluder.
    pub occluder_phase: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        ViewParams {
            scale: 1.0,
            rotation: 0.0,
            shear: 0.0,
            translation: [0.0, 0.0],
            gain: 1.0,
            background: [0.5, 0.5, 0.5],
            occluder_phase: 0.0,
        }
    }
}

impl ViewParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::arg(format!(
                "view scale must be positive, got {}",
                self.scale
            )));
        }
        // A zero gain (lights off) is renderable; sampled views are always positive.
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::arg(format!(
                "lighting gain must be non-negative, got {}",
                self.gain
            )));
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("background colour outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.occluder_phase) {
            return Err(Error::arg("occluder phase outside [0, 1]"));
        }
        let finite = [
            self.rotation,
            self.shear,
            self.translation[0],
            self.translation[1],
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite view parameter"));
        }
        Ok(())
    }

    /// Linear part of the object→canvas map as a row-major 2x2 matrix.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let k = self.shear;
        let sc = self.scale;
        // R * Sh * S with Sh = [[1, k], [0, 1]]
        [[c * sc, (c * k - s) * sc], [s * sc, (s * k + c) * sc]]
    }
}
