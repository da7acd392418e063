//! Tracking metrics: IOU, drift detection, per-run reports, per-frame
//! curves and the transferability matrix.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::{render_sequence, PlanarObject, Scene, TextureMap};
use crate::siamese::Victim;
use crate::tracker::{track, BBox, TrackPoint};

/// Default drift threshold.
pub const DRIFT_TAU: f64 = 0.1;

/// Intersection over union; 0 when the boxes are disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Earliest frame from which every IOU stays below `tau`.
pub fn detect_drift(ious: &[f64], tau: f64) -> Result<Option<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("drift threshold {tau} outside (0, 1)")));
    }
    let mut start = None;
    for (t, &v) in ious.iter().enumerate().rev() {
        if v < tau {
            start = Some(t);
        } else {
            break;
        }
    }
    Ok(start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_frame_iou: Vec<f64>,
    pub raw_max: Vec<f64>,
    pub penalized_max: Vec<f64>,
    pub drift_frame: Option<usize>,
    pub mean_iou: f64,
    /// Mean clean raw max minus mean raw max of this run.
    pub score_drop: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Score a tracker run against ground truth, optionally against a clean
/// baseline run of the same video.
pub fn evaluate(
    points: &[TrackPoint],
    truth: &[BBox],
    baseline: Option<&[TrackPoint]>,
) -> Result<EvalReport> {
    if points.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} tracked frames against {} ground-truth boxes",
            points.len(),
            truth.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::arg("cannot evaluate an empty run"));
    }
    let per_frame_iou: Vec<f64> = points
        .iter()
        .zip(truth)
        .map(|(p, g)| p.bbox().iou(g))
        .collect();
    let raw_max: Vec<f64> = points.iter().map(|p| p.raw_max).collect();
    let penalized_max = points.iter().map(|p| p.penalized_max).collect();
    let score_drop = match baseline {
        Some(b) if b.len() != points.len() => {
            return Err(Error::arg(format!(
                "baseline has {} frames, run has {}",
                b.len(),
                points.len()
            )))
        }
        Some(b) => Some(mean(&b.iter().map(|p| p.raw_max).collect::<Vec<_>>()) - mean(&raw_max)),
        None => None,
    };
    Ok(EvalReport {
        drift_frame: detect_drift(&per_frame_iou, DRIFT_TAU)?,
        mean_iou: mean(&per_frame_iou),
        per_frame_iou,
        raw_max,
        penalized_max,
        score_drop,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Per-frame IOU and score curves.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "iou", "raw_max", "penalized_max"])?;
        for (t, ((i, r), p)) in self
            .per_frame_iou
            .iter()
            .zip(&self.raw_max)
            .zip(&self.penalized_max)
            .enumerate()
        {
            w.write_record([t.to_string(), i.to_string(), r.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Render `scene` with `texture`, track from the first ground-truth box and
/// return the track with the ground truth.
pub fn run_video(
    victim: &Victim,
    scene: &Scene,
    object: &PlanarObject,
    texture: &TextureMap,
    penalty: f64,
) -> Result<(Vec<TrackPoint>, Vec<BBox>)> {
    let (frames, boxes) = render_sequence(scene, object, texture)?;
    let points = track(victim, &frames, boxes[0], penalty)?;
    Ok((points, boxes))
}

/// Mean IOU (percent) of every victim on every texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[victim][texture]`.
    pub cells: Vec<Vec<f64>>,
}

/// Track every named texture with every victim on `scene`. Cells run in
/// parallel and are stored row-major.
pub fn transfer_matrix(
    victims: &[&Victim],
    textures: &[(String, TextureMap)],
    scene: &Scene,
    object: &PlanarObject,
    penalty: f64,
) -> Result<TransferMatrix> {
    let cols = textures.len();
    let cells: Vec<Result<f64>> = (0..victims.len() * cols)
        .into_par_iter()
        .map(|i| {
            let (points, truth) = run_video(
                victims[i / cols],
                scene,
                object,
                &textures[i % cols].1,
                penalty,
            )?;
            Ok(100.0 * evaluate(&points, &truth, None)?.mean_iou)
        })
        .collect();
    let mut flat = Vec::with_capacity(cells.len());
    for c in cells {
        flat.push(c?);
    }
    Ok(TransferMatrix {
        rows: victims.iter().map(|v| v.name.clone()).collect(),
        columns: textures.iter().map(|(n, _)| n.clone()).collect(),
        cells: if cols == 0 {
            vec![Vec::new(); victims.len()]
        } else {
            flat.chunks(cols).map(|c| c.to_vec()).collect()
        },
    })
}

impl TransferMatrix {
    pub fn cell(&self, victim: &str, texture: &str) -> Option<f64> {
        let r = self.rows.iter().position(|n| n == victim)?;
        let c = self.columns.iter().position(|n| n == texture)?;
        Some(self.cells[r][c])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["victim".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
