use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Record, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Input sizes and convolution stack shared by both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetGeometry {
    pub exemplar_size: usize,
    pub search_size: usize,
    pub layers: Vec<LayerSpec>,
    /// Target RMS of every layer's activations on random [0, 1] images.
    #[serde(default = "default_rms")]
    pub activation_rms: f64,
}

fn default_rms() -> f64 {
    1.0
}

impl Default for NetGeometry {
    fn default() -> Self {
        NetGeometry {
            exemplar_size: 32,
            search_size: 64,
            layers: vec![
                LayerSpec {
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
            ],
            activation_rms: default_rms(),
        }
    }
}

impl NetGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::arg("embedder needs at least one layer"));
        }
        if self
            .layers
            .iter()
            .any(|l| l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
        {
            return Err(Error::arg("layer sizes must be positive"));
        }
        if self.exemplar_size >= self.search_size {
            return Err(Error::arg("exemplar must be smaller than search"));
        }
        let ez = self.feature_size(self.exemplar_size)?;
        let sz = self.feature_size(self.search_size)?;
        if ez == 0 || ez > sz {
            return Err(Error::arg(
                "exemplar features do not fit the search features",
            ));
        }
        Ok(())
    }

    /// Spatial extent after the conv stack.
    pub fn feature_size(&self, input: usize) -> Result<usize> {
        let mut n = input;
        for l in &self.layers {
            if l.kernel > n {
                return Err(Error::InvalidShape(format!(
                    "kernel {} exceeds extent {n}",
                    l.kernel
                )));
            }
            n = (n - l.kernel) / l.stride + 1;
        }
        Ok(n)
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(3)
    }
}

/// Convolutional feature extractor applied identically to exemplar and
/// search images. ReLU sits between layers; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub geometry: NetGeometry,
    pub kernels: Vec<Tensor>,
}

/// Embedder weights registered on a record. Both branches must embed
/// through the same instance.
#[derive(Clone, Debug)]
pub struct EmbedderVars {
    kernels: Vec<Var>,
}

impl EmbedderVars {
    pub fn kernels(&self) -> &[Var] {
        &self.kernels
    }
}

impl Embedder {
    /// Orthogonal-style random weights. First-layer filters are zero-mean
    /// so flat colour regions respond with exactly zero; each layer is then
    /// scaled so its activations have the configured RMS on random images.
    pub fn init(seed: u64, geometry: NetGeometry) -> Result<Self> {
        geometry.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernels = Vec::with_capacity(geometry.layers.len());
        let mut in_c = 3;
        for (i, l) in geometry.layers.iter().enumerate() {
            let fan_in = in_c * l.kernel * l.kernel;
            let rows = orthogonal_rows(l.out_channels, fan_in, i == 0, &mut rng);
            kernels.push(Tensor::new(
                vec![l.out_channels, in_c, l.kernel, l.kernel],
                rows,
            )?);
            in_c = l.out_channels;
        }
        let mut emb = Embedder { geometry, kernels };
        emb.calibrate(seed)?;
        Ok(emb)
    }

    /// Rescale layer by layer so activation RMS on 100 random [0, 1]
    /// search-size images equals `geometry.activation_rms`.
    fn calibrate(&mut self, seed: u64) -> Result<()> {
        let images = calibration_images(seed, self.geometry.search_size, 100);
        let target = self.geometry.activation_rms;
        for layer in 0..self.kernels.len() {
            let rms = self.layer_rms(&images, layer)?;
            if rms <= 0.0 || !rms.is_finite() {
                return Err(Error::arg(format!(
                    "layer {layer} is dead on calibration images"
                )));
            }
            let k = target / rms;
            self.kernels[layer] = self.kernels[layer].map(|v| v * k);
        }
        Ok(())
    }

    /// RMS of the activations of `layer` over `images`.
    pub fn layer_rms(&self, images: &[Tensor], layer: usize) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for img in images {
            let acts = self.activations(img)?;
            let a = &acts[layer];
            sum += a.data().iter().map(|v| v * v).sum::<f64>();
            n += a.len();
        }
        Ok((sum / n as f64).sqrt())
    }

    /// Post-nonlinearity activations of every layer.
    pub fn activations(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut rec = Record::new();
        let mut x = rec.constant(image.clone());
        let mut out = Vec::new();
        for (i, k) in self.kernels.iter().enumerate() {
            let kv = rec.constant(k.clone());
            x = rec.conv2d(x, kv, self.geometry.layers[i].stride)?;
            if i + 1 < self.kernels.len() {
                x = rec.relu(x);
            }
            out.push(rec.value(x).clone());
        }
        Ok(out)
    }

    pub fn register(&self, rec: &mut Record) -> EmbedderVars {
        EmbedderVars {
            kernels: self
                .kernels
                .iter()
                .map(|k| rec.constant(k.clone()))
                .collect(),
        }
    }

    /// Register weights as trainable parameters.
    pub fn register_params(&self, rec: &mut Record) -> EmbedderVars {
        EmbedderVars {
            kernels: self.kernels.iter().map(|k| rec.param(k.clone())).collect(),
        }
    }

    pub fn embed(&self, rec: &mut Record, vars: &EmbedderVars, image: Var) -> Result<Var> {
        let (c, h, w) = rec.value(image).chw()?;
        let ok = |n: usize| n == self.geometry.exemplar_size || n == self.geometry.search_size;
        if c != 3 || h != w || !ok(h) {
            return Err(Error::InvalidShape(format!(
                "embedder expects 3x{e}x{e} or 3x{s}x{s}, got {c}x{h}x{w}",
                e = self.geometry.exemplar_size,
                s = self.geometry.search_size
            )));
        }
        let mut x = image;
        let last = vars.kernels.len() - 1;
        for (i, (&k, l)) in vars.kernels.iter().zip(&self.geometry.layers).enumerate() {
            x = rec.conv2d(x, k, l.stride)?;
            if i < last {
                x = rec.relu(x);
            }
        }
        Ok(x)
    }

    /// Forward-only embedding.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let mut rec = Record::new();
        let vars = self.register(&mut rec);
        let x = rec.constant(image.clone());
        let f = self.embed(&mut rec, &vars, x)?;
        Ok(rec.value(f).clone())
    }
}

pub(crate) fn calibration_images(seed: u64, size: usize, count: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ca11);
    (0..count)
        .map(|_| {
            let data = (0..3 * size * size).map(|_| rng.gen::<f64>()).collect();
            Tensor::new(vec![3, size, size], data).expect("calibration image shape")
        })
        .collect()
}

/// `rows` unit vectors of length `dim`, mutually orthogonal in blocks of at
/// most `dim` (or `dim - 1` when `zero_mean`, which also removes the
/// constant direction).
pub(crate) fn orthogonal_rows(
    rows: usize,
    dim: usize,
    zero_mean: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let capacity = if zero_mean { dim - 1 } else { dim };
    let mut block: Vec<Vec<f64>> = Vec::new();
    while out.len() < rows {
        if block.len() == capacity {
            block.clear();
        }
        let mut v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if zero_mean {
            let m = v.iter().sum::<f64>() / dim as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
        for b in &block {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        block.push(v.clone());
        out.push(v);
    }
    out.concat()
}
