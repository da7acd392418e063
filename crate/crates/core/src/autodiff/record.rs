use std::sync::Arc;

use super::conv;
use super::sample::SamplePlan;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value on a [`Record`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds accepted by [`Record::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul(f64),
    Relu,
    Square,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Place {
        src: Var,
        channels: usize,
        plane: usize,
        idx: Vec<usize>,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        stride: usize,
    },
    Sample {
        src: Var,
        channels: usize,
        plan: Arc<SamplePlan>,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every input precedes the
/// operations that consume it. One record supports one backward pass.
#[derive(Debug, Default)]
pub struct Record {
    nodes: Vec<Node>,
    differentiated: bool,
}

/// Gradients produced by [`Record::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clear all recorded operations so the record can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.differentiated = false;
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary =
            |b: Option<Var>| b.ok_or_else(|| Error::arg(format!("{kind:?} needs two operands")));
        match kind {
            Elementwise::Add => self.add(a, binary(b)?),
            Elementwise::Sub => self.sub(a, binary(b)?),
            Elementwise::Mul => self.mul(a, binary(b)?),
            Elementwise::Div => self.div(a, binary(b)?),
            Elementwise::ScalarMul(k) => Ok(self.scale(a, k)),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::Square => Ok(self.square(a)),
        }
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// Elementwise quotient; the caller keeps the divisor away from zero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x / y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Div(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| k * x);
        let ng = self.needs(a);
        self.push(v, Op::ScalarMul(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let ng = self.needs(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(v, Op::Square(a), ng)
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        let ng = self.needs(a);
        self.push(v, Op::Sqrt(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(v, Op::Clamp(a, lo, hi), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Flat-index gather into a 1-D tensor.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(Error::arg(format!(
                "gather index {bad} out of range for {} values",
                src.len()
            )));
        }
        let data: Vec<f64> = idx.iter().map(|&i| src.data()[i]).collect();
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(data), Op::Gather(a, idx), ng))
    }

    /// Largest element as a scalar (subgradient routes to the first argmax).
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let i = self.value(a).argmax();
        let g = self.gather(a, vec![i])?;
        self.reshape(g, vec![])
    }

    /// Write `src` (C x N) into a copy of `base` (C x plane) at spatial
    /// positions `idx`.
    pub fn place(&mut self, base: &Tensor, src: Var, idx: Vec<usize>) -> Result<Var> {
        let (channels, plane) = match base.shape() {
            [c, h, w] => (*c, h * w),
            s => return Err(Error::InvalidShape(format!("place base {s:?}"))),
        };
        let s = self.value(src);
        if s.len() != channels * idx.len() {
            return Err(Error::ShapeMismatch {
                left: s.shape().to_vec(),
                right: vec![channels, idx.len()],
            });
        }
        if idx.iter().any(|&i| i >= plane) {
            return Err(Error::arg("place index outside the base plane"));
        }
        let mut out = base.clone();
        let n = idx.len();
        {
            let od = out.data_mut();
            for c in 0..channels {
                for (k, &i) in idx.iter().enumerate() {
                    od[c * plane + i] = s.data()[c * n + k];
                }
            }
        }
        let ng = self.needs(src);
        Ok(self.push(
            out,
            Op::Place {
                src,
                channels,
                plane,
                idx,
            },
            ng,
        ))
    }

    /// Valid-padding 2-D convolution (cross-correlation form).
    ///
    /// `input` is CxHxW, `kernels` is KxCxRxS; output is KxH'xW'.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let out = conv::forward(self.value(input), self.value(kernels), stride)?;
        let ng = self.needs(input) || self.needs(kernels);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                stride,
            },
            ng,
        ))
    }

    /// Valid-mode sliding inner product of an exemplar feature map over a
    /// search feature map, summed over channels. Output is MxM.
    pub fn cross_correlate(&mut self, exemplar: Var, search: Var) -> Result<Var> {
        let (c, h, w) = self.value(exemplar).chw()?;
        let (cs, hs, ws) = self.value(search).chw()?;
        if c != cs {
            return Err(Error::ShapeMismatch {
                left: vec![c, h, w],
                right: vec![cs, hs, ws],
            });
        }
        if h > hs || w > ws {
            return Err(Error::InvalidShape(format!(
                "exemplar {h}x{w} larger than search {hs}x{ws}"
            )));
        }
        let k = self.reshape(exemplar, vec![1, c, h, w])?;
        let out = self.conv2d(search, k, 1)?;
        self.reshape(out, vec![hs - h + 1, ws - w + 1])
    }

    /// Bilinear resampling of a CxHxW source through a precomputed plan.
    /// Output is C x plan.len().
    pub fn sample(&mut self, src: Var, plan: Arc<SamplePlan>) -> Result<Var> {
        let (c, h, w) = self.value(src).chw()?;
        if h != plan.src_h || w != plan.src_w {
            return Err(Error::ShapeMismatch {
                left: vec![h, w],
                right: vec![plan.src_h, plan.src_w],
            });
        }
        let data = plan.forward(self.value(src).data(), c);
        let v = Tensor::new(vec![c, plan.len()], data)?;
        let ng = self.needs(src);
        Ok(self.push(
            v,
            Op::Sample {
                src,
                channels: c,
                plan,
            },
            ng,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]` for Nx2 logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let n = match l.shape() {
            [n, 2] => *n,
            s => {
                return Err(Error::InvalidShape(format!(
                    "logits must be Nx2, got {s:?}"
                )))
            }
        };
        if labels.len() != n {
            return Err(Error::arg(format!("{} labels for {n} rows", labels.len())));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::arg("labels must be 0 or 1"));
        }
        let mut probs = Vec::with_capacity(2 * n);
        let mut loss = 0.0;
        for (row, &y) in l.data().chunks_exact(2).zip(labels) {
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            let lse = m + (e0 + e1).ln();
            loss += lse - row[y];
            probs.push(e0 / (e0 + e1));
            probs.push(e1 / (e0 + e1));
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate in reverse
    /// record order, which makes the result bit-reproducible.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.differentiated {
            return Err(Error::AlreadyDifferentiated);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (vb, out) = (self.value(*b).data(), node.value.data());
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] -= g[k] * out[k] / vb[k];
                    }
                });
            }
            Op::ScalarMul(a, k) => {
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g)
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        if va[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += 2.0 * va[k] * g[k];
                    }
                });
            }
            Op::Sqrt(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        if out[k] > 0.0 {
                            s[k] += g[k] / (2.0 * out[k]);
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        if va[k] > *lo && va[k] < *hi {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0]));
            }
            Op::Gather(a, idx) => {
                acc(*a, &mut |s| {
                    for (k, &j) in idx.iter().enumerate() {
                        s[j] += g[k];
                    }
                });
            }
            Op::Place {
                src,
                channels,
                plane,
                idx,
            } => {
                let n = idx.len();
                acc(*src, &mut |s| {
                    for c in 0..*channels {
                        for (k, &j) in idx.iter().enumerate() {
                            s[c * n + k] += g[c * plane + j];
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
            } => {
                let (vi, vk) = (self.value(*input), self.value(*kernels));
                acc(*input, &mut |s| conv::backward_input(vi, vk, *stride, g, s));
                acc(*kernels, &mut |s| {
                    conv::backward_kernels(vi, vk, *stride, g, s)
                });
            }
            Op::Sample {
                src,
                channels,
                plan,
            } => {
                acc(*src, &mut |s| plan.backward(g, *channels, s));
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let n = labels.len() as f64;
                acc(*logits, &mut |s| {
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..2 {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            s[2 * r + c] += g[0] * (probs[2 * r + c] - onehot) / n;
                        }
                    }
                });
            }
        }
    }
}
