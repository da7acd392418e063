use std::path::Path;

use serde::{Deserialize, Serialize};

use super::crop::{crop_and_scale, CropRole, CropSpec};
use super::window::{apply_penalty, CosineWindow};
use super::BBox;
use crate::autodiff::{Record, Tensor};
use crate::error::{Error, Result};
use crate::siamese::{HeadKind, Victim};

/// Tracking state. The exemplar features are computed once from the first
/// frame and never change.
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub bbox: BBox,
    exemplar: Tensor,
    pub window: CosineWindow,
    pub kind: HeadKind,
    pub crop: CropSpec,
}

/// One tracked frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub raw_max: f64,
    pub penalized_max: f64,
}

impl TrackPoint {
    pub fn bbox(&self) -> BBox {
        BBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
        }
    }
}

/// Shift a map to a zero minimum and rescale it to total mass `mass`; a
/// flat map becomes all zeros.
pub fn normalize_map(map: &Tensor, mass: f64) -> Tensor {
    let lo = map.min();
    let total: f64 = map.data().iter().map(|v| v - lo).sum();
    if total <= 0.0 {
        return map.map(|_| 0.0);
    }
    map.map(|v| (v - lo) / total * mass)
}

/// The map a tracker blends with its window: symmetric responses normalized
/// to total mass `mass`, RPN probabilities unchanged.
pub fn visible_map(kind: HeadKind, raw: &Tensor, mass: f64) -> Tensor {
    match kind {
        HeadKind::Symmetric => normalize_map(raw, mass),
        HeadKind::Rpn => raw.clone(),
    }
}

/// Crop spec matching a victim's input sizes.
pub fn crop_spec_for(victim: &Victim) -> CropSpec {
    let g = victim.geometry();
    CropSpec {
        exemplar_size: g.exemplar_size,
        search_size: g.search_size,
    }
}

/// Exemplar crop of `frame` around `bbox`, as a plain tensor.
pub fn exemplar_image(frame: &Tensor, bbox: &BBox, spec: &CropSpec) -> Result<Tensor> {
    crop_image(frame, bbox, CropRole::Exemplar, spec)
}

pub fn crop_image(frame: &Tensor, bbox: &BBox, role: CropRole, spec: &CropSpec) -> Result<Tensor> {
    let mut rec = Record::new();
    let img = rec.constant(frame.clone());
    let v = crop_and_scale(&mut rec, img, bbox, role, spec)?;
    Ok(rec.value(v).clone())
}

impl TrackerState {
    pub fn init(victim: &Victim, frame: &Tensor, init_box: BBox, penalty: f64) -> Result<Self> {
        init_box.validate()?;
        let crop = crop_spec_for(victim);
        let z = exemplar_image(frame, &init_box, &crop)?;
        let exemplar = victim.embedder.features(&z)?;
        let window = CosineWindow::new(victim.map_size()?, penalty)?;
        Ok(TrackerState {
            bbox: init_box,
            exemplar,
            window,
            kind: victim.kind(),
            crop,
        })
    }

    pub fn exemplar(&self) -> &Tensor {
        &self.exemplar
    }

    /// Raw response map (score map or per-cell max fg probability) for the
    /// search crop around the current box.
    pub fn response(&self, victim: &Victim, frame: &Tensor) -> Result<Tensor> {
        if victim.kind() != self.kind {
            return Err(Error::arg("victim head does not match tracker state"));
        }
        let x = crop_image(frame, &self.bbox, CropRole::Search, &self.crop)?;
        victim.response(&self.exemplar, &x)
    }

    /// Response blended with the window. Symmetric score maps are first
    /// normalized to the window's total mass; RPN probabilities are used as
    /// they are.
    pub fn penalized(&self, raw: &Tensor) -> Result<Tensor> {
        apply_penalty(
            &visible_map(self.kind, raw, self.window.mass()),
            &self.window,
        )
    }

    /// Localize the target in `frame` and move the box. Returns the new box
    /// plus the raw and penalized maxima of the response.
    pub fn step(&mut self, victim: &Victim, frame: &Tensor) -> Result<(BBox, f64, f64)> {
        let raw = self.response(victim, frame)?;
        let pen = self.penalized(&raw)?;
        let m = self.window.size;
        let best = pen.argmax();
        let (row, col) = (best / m, best % m);
        let mid = self.window.center();
        let geo = self.crop.geometry(&self.bbox)?;
        // one cell = total stride search-crop pixels = stride / s image pixels
        let pitch = victim.geometry().total_stride() as f64 / geo.scale;
        let dx = (col as f64 - mid) * pitch;
        let dy = (row as f64 - mid) * pitch;
        self.bbox = self.bbox.with_center(self.bbox.cx + dx, self.bbox.cy + dy);
        Ok((self.bbox, raw.max(), pen.max()))
    }
}

/// Track through `frames` starting from `init_box` on frame 0.
pub fn track(
    victim: &Victim,
    frames: &[Tensor],
    init_box: BBox,
    penalty: f64,
) -> Result<Vec<TrackPoint>> {
    let Some(first) = frames.first() else {
        return Err(Error::arg("cannot track an empty video"));
    };
    let mut state = TrackerState::init(victim, first, init_box, penalty)?;
    let point = |frame, b: BBox, raw, pen| TrackPoint {
        frame,
        cx: b.cx,
        cy: b.cy,
        w: b.w,
        h: b.h,
        raw_max: raw,
        penalized_max: pen,
    };
    let raw0 = state.response(victim, first)?;
    let pen0 = state.penalized(&raw0)?;
    let mut out = vec![point(0, init_box, raw0.max(), pen0.max())];
    for (i, f) in frames.iter().enumerate().skip(1) {
        let (b, raw, pen) = state.step(victim, f)?;
        out.push(point(i, b, raw, pen));
    }
    Ok(out)
}

pub fn write_track_csv(points: &[TrackPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_track_csv(path: &Path) -> Result<Vec<TrackPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
