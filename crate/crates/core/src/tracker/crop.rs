use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BBox;
use crate::autodiff::{Border, Record, SamplePlan, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropRole {
    Exemplar,
    Search,
}

/// Exemplar/search cropping rule: context margin `p = (w + h) / 4`, scale
/// `s` with `s(w + 2p) * s(h + 2p) = A`, square crops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    /// Exemplar output side; the exemplar area is `A = exemplar_size^2`.
    pub exemplar_size: usize,
    /// Search output side.
    pub search_size: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            exemplar_size: 32,
            search_size: 64,
        }
    }
}

/// Continuous crop geometry for one box, before any rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropGeometry {
    /// Context margin p.
    pub context: f64,
    /// Image-to-crop scale s.
    pub scale: f64,
    /// Side of the exemplar crop in image pixels, `sqrt(A) / s`.
    pub exemplar_side: f64,
    /// Side of the search crop in image pixels.
    pub search_side: f64,
}

impl CropSpec {
    pub fn area(&self) -> f64 {
        (self.exemplar_size * self.exemplar_size) as f64
    }

    pub fn ratio(&self) -> f64 {
        self.search_size as f64 / self.exemplar_size as f64
    }

    pub fn output_size(&self, role: CropRole) -> usize {
        match role {
            CropRole::Exemplar => self.exemplar_size,
            CropRole::Search => self.search_size,
        }
    }

    pub fn geometry(&self, bbox: &BBox) -> Result<CropGeometry> {
        bbox.validate()?;
        let context = (bbox.w + bbox.h) / 4.0;
        let padded = (bbox.w + 2.0 * context) * (bbox.h + 2.0 * context);
        let scale = (self.area() / padded).sqrt();
        let exemplar_side = padded.sqrt();
        Ok(CropGeometry {
            context,
            scale,
            exemplar_side,
            search_side: exemplar_side * self.ratio(),
        })
    }

    /// Continuous `(row, col)` image positions sampled by a crop.
    pub fn sample_points(&self, bbox: &BBox, role: CropRole) -> Result<Vec<(f64, f64)>> {
        let g = self.geometry(bbox)?;
        let n = self.output_size(role);
        let side = match role {
            CropRole::Exemplar => g.exemplar_side,
            CropRole::Search => g.search_side,
        };
        let step = side / n as f64;
        let half = n as f64 / 2.0;
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                pts.push((
                    bbox.cy + (i as f64 + 0.5 - half) * step,
                    bbox.cx + (j as f64 + 0.5 - half) * step,
                ));
            }
        }
        Ok(pts)
    }
}

/// Crop around `bbox` and resize bilinearly to the role's output size.
/// Pixels outside the image take the image's per-channel mean colour.
pub fn crop_and_scale(
    rec: &mut Record,
    image: Var,
    bbox: &BBox,
    role: CropRole,
    spec: &CropSpec,
) -> Result<Var> {
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::arg("crop box must have positive extent"));
    }
    let (c, h, w) = rec.value(image).chw()?;
    let pts = spec.sample_points(bbox, role)?;
    let plan = Arc::new(SamplePlan::bilinear(h, w, &pts, Border::MeanFill));
    let flat = rec.sample(image, plan)?;
    let n = spec.output_size(role);
    rec.reshape(flat, vec![c, n, n])
}
