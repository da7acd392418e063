use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One-dimensional Hann weight at distance `d` cells from the centre of an
/// `m`-cell map: `0.5 + 0.5 cos(2 pi d / (m - 1))`.
pub fn hann(d: f64, m: usize) -> f64 {
    if m < 2 {
        return 1.0;
    }
    0.5 + 0.5 * (2.0 * PI * d / (m as f64 - 1.0)).cos()
}

/// Separable cosine window over an `size x size` score map with penalty
/// weight `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineWindow {
    pub size: usize,
    pub weight: f64,
}

impl CosineWindow {
    pub fn new(size: usize, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::arg(format!(
                "penalty weight {weight} outside [0, 1]"
            )));
        }
        if size == 0 {
            return Err(Error::arg("window size must be positive"));
        }
        Ok(CosineWindow { size, weight })
    }

    pub fn center(&self) -> f64 {
        (self.size as f64 - 1.0) / 2.0
    }

    /// Sum of the window over all cells.
    pub fn mass(&self) -> f64 {
        let c = self.center();
        let line: f64 = (0..self.size).map(|i| hann(i as f64 - c, self.size)).sum();
        line * line
    }

    /// Window value at cell `(row, col)`.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        let c = self.center();
        hann(row as f64 - c, self.size) * hann(col as f64 - c, self.size)
    }
}

/// Blend a raw score map with the window: `(1 - c) s + c w` per cell.
pub fn apply_penalty(map: &Tensor, window: &CosineWindow) -> Result<Tensor> {
    let m = window.size;
    if map.shape() != [m, m] {
        return Err(Error::ShapeMismatch {
            left: map.shape().to_vec(),
            right: vec![m, m],
        });
    }
    if !(0.0..=1.0).contains(&window.weight) {
        return Err(Error::arg(format!(
            "penalty weight {} outside [0, 1]",
            window.weight
        )));
    }
    let c = window.weight;
    let mut out = map.clone();
    for r in 0..m {
        for q in 0..m {
            let v = &mut out.data_mut()[r * m + q];
            *v = (1.0 - c) * *v + c * window.value(r, q);
        }
    }
    Ok(out)
}

/// Final score of a position with raw score `s` at distance `d` cells,
/// using the one-dimensional window.
pub fn penalized_score(s: f64, d: f64, c: f64, m: usize) -> f64 {
    (1.0 - c) * s + c * hann(d, m)
}

/// Largest raw-score lead `s - s'` of the target (distance `d`) over a
/// disturbing position (distance `d_prime`) that still lets the disturbing
/// position win after the penalty:
/// `0.5c / (1 - c) * [cos(2 pi d' / (M - 1)) - cos(2 pi d / (M - 1))]`.
pub fn mislead_threshold(d: f64, d_prime: f64, c: f64, m: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::arg(format!("penalty weight {c} must lie in [0, 1)")));
    }
    if m < 2 {
        return Err(Error::arg("score map needs M >= 2"));
    }
    let arg = 2.0 * PI / (m as f64 - 1.0);
    Ok(0.5 * c / (1.0 - c) * ((arg * d_prime).cos() - (arg * d).cos()))
}

/// Whether the disturbing position outranks the target after the penalty.
pub fn check_mislead(s: f64, s_prime: f64, d: f64, d_prime: f64, c: f64, m: usize) -> Result<bool> {
    Ok(s - s_prime < mislead_threshold(d, d_prime, c, m)?)
}
