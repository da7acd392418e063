//! Dense valid-padding convolution kernels used by [`super::Record`].

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    r: usize,
    s: usize,
    oh: usize,
    ow: usize,
}

pub(crate) fn geometry(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::arg("conv stride must be positive"));
    }
    let (c, h, w) = input.chw()?;
    let (k, kc, r, s) = match kernels.shape() {
        [k, kc, r, s] => (*k, *kc, *r, *s),
        sh => {
            return Err(Error::InvalidShape(format!(
                "kernels must be KxCxRxS, got {sh:?}"
            )))
        }
    };
    if kc != c {
        return Err(Error::ShapeMismatch {
            left: input.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    if r > h || s > w || r == 0 || s == 0 {
        return Err(Error::InvalidShape(format!(
            "kernel {r}x{s} does not fit input {h}x{w}"
        )));
    }
    Ok(Geometry {
        c,
        h,
        w,
        k,
        r,
        s,
        oh: (h - r) / stride + 1,
        ow: (w - s) / stride + 1,
    })
}

pub(crate) fn forward(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let g = geometry(input, kernels, stride)?;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![0.0; g.k * g.oh * g.ow];
    for k in 0..g.k {
        let o = &mut out[k * g.oh * g.ow..(k + 1) * g.oh * g.ow];
        for c in 0..g.c {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for r in 0..g.r {
                for s in 0..g.s {
                    let wv = wt[((k * g.c + c) * g.r + r) * g.s + s];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let row = &plane[(oy * stride + r) * g.w + s..];
                        let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                        if stride == 1 {
                            for (ov, iv) in orow.iter_mut().zip(row) {
                                *ov += wv * iv;
                            }
                        } else {
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                *ov += wv * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.k, g.oh, g.ow], out)
}

pub(crate) fn backward_input(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &[f64],
    grad_in: &mut [f64],
) {
    let g = geometry(input, kernels, stride).expect("validated in forward");
    let wt = kernels.data();
    for k in 0..g.k {
        let go = &grad_out[k * g.oh * g.ow..(k + 1) * g.oh * g.ow];
        for c in 0..g.c {
            let gi = &mut grad_in[c * g.h * g.w..(c + 1) * g.h * g.w];
            for r in 0..g.r {
                for s in 0..g.s {
                    let wv = wt[((k * g.c + c) * g.r + r) * g.s + s];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let base = (oy * stride + r) * g.w + s;
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        if stride == 1 {
                            for (iv, gv) in gi[base..base + g.ow].iter_mut().zip(grow) {
                                *iv += wv * gv;
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                gi[base + ox * stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn backward_kernels(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &[f64],
    grad_k: &mut [f64],
) {
    let g = geometry(input, kernels, stride).expect("validated in forward");
    let x = input.data();
    for k in 0..g.k {
        let go = &grad_out[k * g.oh * g.ow..(k + 1) * g.oh * g.ow];
        for c in 0..g.c {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for r in 0..g.r {
                for s in 0..g.s {
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let row = &plane[(oy * stride + r) * g.w + s..];
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        if stride == 1 {
                            for (iv, gv) in row.iter().zip(grow) {
                                acc += iv * gv;
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                acc += row[ox * stride] * gv;
                            }
                        }
                    }
                    grad_k[((k * g.c + c) * g.r + r) * g.s + s] += acc;
                }
            }
        }
    }
}
