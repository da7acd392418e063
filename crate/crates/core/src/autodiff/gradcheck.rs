//! Central finite-difference checks against analytic gradients.

use super::Tensor;

/// Outcome of comparing one coordinate.
#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Relative error with an absolute floor so that coordinates whose true
/// gradient vanishes do not divide by zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` at each index.
pub fn central_differences(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    indices: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let fp = f(&probe);
            probe.data_mut()[i] = orig - h;
            let fm = f(&probe);
            probe.data_mut()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Compare an analytic gradient against central differences.
pub fn check(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Vec<CoordCheck> {
    let numeric = central_differences(f, x, indices, h);
    indices
        .iter()
        .zip(numeric)
        .map(|(&index, numeric)| {
            let a = analytic.data()[index];
            CoordCheck {
                index,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, floor),
            }
        })
        .collect()
}

pub fn worst(checks: &[CoordCheck]) -> Option<&CoordCheck> {
    checks.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
}
