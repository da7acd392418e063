//! Bilinear resampling expressed as a fixed sparse linear map.
//!
//! Sample positions are constants of the plan; only the source values are
//! differentiated. Continuous coordinates put pixel `(i, j)` at the centre
//! `(i + 0.5, j + 0.5)`.

/// How taps that fall outside the source grid are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Clamp the tap to the nearest edge texel.
    Clamp,
    /// Replace the tap with the per-channel mean of the source.
    MeanFill,
}

#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub(crate) src_h: usize,
    pub(crate) src_w: usize,
    /// Up to four `(flat spatial index, weight)` taps per output point.
    pub(crate) taps: Vec<Vec<(usize, f64)>>,
    /// Weight placed on the channel mean (MeanFill taps only).
    pub(crate) fill: Vec<f64>,
}

impl SamplePlan {
    /// Plan bilinear samples at continuous `(y, x)` positions.
    pub fn bilinear(src_h: usize, src_w: usize, points: &[(f64, f64)], border: Border) -> Self {
        let mut taps = Vec::with_capacity(points.len());
        let mut fill = Vec::with_capacity(points.len());
        for &(y, x) in points {
            let fy = y - 0.5;
            let fx = x - 0.5;
            let y0 = fy.floor();
            let x0 = fx.floor();
            let wy = fy - y0;
            let wx = fx - x0;
            let (y0, x0) = (y0 as i64, x0 as i64);
            let corners = [
                (y0, x0, (1.0 - wy) * (1.0 - wx)),
                (y0, x0 + 1, (1.0 - wy) * wx),
                (y0 + 1, x0, wy * (1.0 - wx)),
                (y0 + 1, x0 + 1, wy * wx),
            ];
            let mut point_taps: Vec<(usize, f64)> = Vec::with_capacity(4);
            let mut point_fill = 0.0;
            for (ty, tx, w) in corners {
                if w == 0.0 {
                    continue;
                }
                let inside = ty >= 0 && tx >= 0 && (ty as usize) < src_h && (tx as usize) < src_w;
                let idx = match (inside, border) {
                    (true, _) => Some(ty as usize * src_w + tx as usize),
                    (false, Border::Clamp) => {
                        let cy = ty.clamp(0, src_h as i64 - 1) as usize;
                        let cx = tx.clamp(0, src_w as i64 - 1) as usize;
                        Some(cy * src_w + cx)
                    }
                    (false, Border::MeanFill) => None,
                };
                match idx {
                    Some(i) => match point_taps.iter_mut().find(|(j, _)| *j == i) {
                        Some(t) => t.1 += w,
                        None => point_taps.push((i, w)),
                    },
                    None => point_fill += w,
                }
            }
            taps.push(point_taps);
            fill.push(point_fill);
        }
        SamplePlan {
            src_h,
            src_w,
            taps,
            fill,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub(crate) fn forward(&self, src: &[f64], channels: usize) -> Vec<f64> {
        let plane = self.src_h * self.src_w;
        let n = self.taps.len();
        let mut out = vec![0.0; channels * n];
        for c in 0..channels {
            let s = &src[c * plane..(c + 1) * plane];
            let mean = if self.fill.iter().any(|&f| f != 0.0) {
                s.iter().sum::<f64>() / plane as f64
            } else {
                0.0
            };
            let o = &mut out[c * n..(c + 1) * n];
            for (i, (taps, &fw)) in self.taps.iter().zip(&self.fill).enumerate() {
                let mut v = fw * mean;
                for &(j, w) in taps {
                    v += w * s[j];
                }
                o[i] = v;
            }
        }
        out
    }

    pub(crate) fn backward(&self, grad_out: &[f64], channels: usize, grad_src: &mut [f64]) {
        let plane = self.src_h * self.src_w;
        let n = self.taps.len();
        for c in 0..channels {
            let g = &grad_out[c * n..(c + 1) * n];
            let gs = &mut grad_src[c * plane..(c + 1) * plane];
            let mut g_mean = 0.0;
            for (i, (taps, &fw)) in self.taps.iter().zip(&self.fill).enumerate() {
                for &(j, w) in taps {
                    gs[j] += w * g[i];
                }
                g_mean += fw * g[i];
            }
            if g_mean != 0.0 {
                let share = g_mean / plane as f64;
                for v in gs.iter_mut() {
                    *v += share;
                }
            }
        }
    }
}
