use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedder::{orthogonal_rows, Embedder, EmbedderVars, NetGeometry};
use crate::autodiff::{Record, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Symmetric,
    Rpn,
}

/// Plain cross-correlation of exemplar and search features, divided by the
/// exemplar feature volume C*h*w.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricHead;

impl SymmetricHead {
    pub fn score(&self, rec: &mut Record, exemplar_feat: Var, search_feat: Var) -> Result<Var> {
        let n = rec.value(exemplar_feat).len() as f64;
        let map = rec.cross_correlate(exemplar_feat, search_feat)?;
        Ok(rec.scale(map, 1.0 / n))
    }
}

/// `k` anchor shapes laid out on the score-map lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub ratios: Vec<f64>,
    pub base_size: f64,
    /// Score-map cell pitch in search-image pixels.
    pub stride: f64,
    pub map_size: usize,
    pub search_size: usize,
}

impl AnchorSet {
    pub fn new(
        ratios: Vec<f64>,
        base_size: f64,
        stride: f64,
        map_size: usize,
        search_size: usize,
    ) -> Result<Self> {
        if ratios.is_empty() || ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::arg("anchor set needs k >= 1 positive aspect ratios"));
        }
        Ok(AnchorSet {
            ratios,
            base_size,
            stride,
            map_size,
            search_size,
        })
    }

    pub fn k(&self) -> usize {
        self.ratios.len()
    }

    pub fn len(&self) -> usize {
        self.k() * self.map_size * self.map_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of cell `(row, col)` in search-image pixels.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let mid = (self.map_size as f64 - 1.0) / 2.0;
        let c = self.search_size as f64 / 2.0;
        (
            c + (row as f64 - mid) * self.stride,
            c + (col as f64 - mid) * self.stride,
        )
    }

    /// `(width, height)` of anchor `a`; ratio is height over width at fixed area.
    pub fn shape(&self, a: usize) -> (f64, f64) {
        let r = self.ratios[a];
        (self.base_size / r.sqrt(), self.base_size * r.sqrt())
    }
}

/// Region-proposal classification head. Template features are lifted to
/// 2k correlation kernels (k background, then k foreground) by a template
/// adjust conv; search features pass a separate search adjust conv.
#[derive(Clone, Debug, PartialEq)]
pub struct RpnHead {
    /// 2k*C x C x r x r
    pub template_adjust: Tensor,
    /// C x C x r x r
    pub search_adjust: Tensor,
    pub anchors: AnchorSet,
    pub logit_scale: f64,
    /// Subtracted from every foreground logit.
    pub fg_bias: f64,
}

/// Construction parameters for [`RpnHead::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpnConfig {
    pub ratios: Vec<f64>,
    pub adjust_kernel: usize,
    /// Output channels of the adjust convs; defaults to the feature channels.
    #[serde(default)]
    pub adjust_channels: Option<usize>,
    /// Relative size of the template-only perturbation of each anchor's
    /// foreground kernel, and the scale of the background kernels.
    pub asymmetry: f64,
    pub logit_scale: f64,
    #[serde(default)]
    pub fg_bias: f64,
}

impl Default for RpnConfig {
    fn default() -> Self {
        RpnConfig {
            ratios: vec![0.5, 1.0, 2.0],
            adjust_kernel: 3,
            adjust_channels: None,
            asymmetry: 1.0,
            logit_scale: 8.0,
            fg_bias: 2.0,
        }
    }
}

impl RpnHead {
    /// Random adjust convs. Each anchor's foreground kernel starts from the
    /// search adjust weights plus an independent template-side perturbation,
    /// so clean targets correlate positively while the two branches stay
    /// distinct parameter sets.
    pub fn init(seed: u64, geometry: &NetGeometry, cfg: &RpnConfig) -> Result<Self> {
        let c = geometry.channels();
        let r = cfg.adjust_kernel;
        let k = cfg.ratios.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a9c_4e7d);
        let fan = c * r * r;
        // unit-norm rows keep unit-RMS features at unit RMS
        let a = cfg.adjust_channels.unwrap_or(c);
        if a == 0 || a > fan {
            return Err(Error::arg(format!("adjust channels must lie in 1..={fan}")));
        }
        let search = orthogonal_rows(a, fan, false, &mut rng);
        let mut template = Vec::with_capacity(2 * k * a * fan);
        for block in 0..2 * k {
            let noise = orthogonal_rows(a, fan, false, &mut rng);
            for (i, n) in noise.iter().enumerate() {
                let base = if block >= k { search[i] } else { 0.0 };
                template.push(base + cfg.asymmetry * n);
            }
        }
        let fz = geometry.feature_size(geometry.exemplar_size)?;
        let fx = geometry.feature_size(geometry.search_size)?;
        if r > fz {
            return Err(Error::arg("adjust kernel larger than exemplar features"));
        }
        let m = (fx - r + 1) - (fz - r + 1) + 1;
        let anchors = AnchorSet::new(
            cfg.ratios.clone(),
            geometry.exemplar_size as f64 / 2.0,
            geometry.total_stride() as f64,
            m,
            geometry.search_size,
        )?;
        Ok(RpnHead {
            template_adjust: Tensor::new(vec![2 * k * a, c, r, r], template)?,
            search_adjust: Tensor::new(vec![a, c, r, r], search)?,
            anchors,
            logit_scale: cfg.logit_scale,
            fg_bias: cfg.fg_bias,
        })
    }

    pub fn k(&self) -> usize {
        self.anchors.k()
    }

    /// 2k x M x M logits: channels `0..k` background, `k..2k` foreground.
    /// Each logit is the correlation of an anchor kernel with a search
    /// window, averaged over the window and times `logit_scale`; foreground
    /// logits are shifted down by `fg_bias`.
    pub fn logits(&self, rec: &mut Record, exemplar_feat: Var, search_feat: Var) -> Result<Var> {
        let ta = rec.constant(self.template_adjust.clone());
        let sa = rec.constant(self.search_adjust.clone());
        self.logits_with(rec, ta, sa, exemplar_feat, search_feat)
    }

    pub(crate) fn logits_with(
        &self,
        rec: &mut Record,
        template_adjust: Var,
        search_adjust: Var,
        exemplar_feat: Var,
        search_feat: Var,
    ) -> Result<Var> {
        let c = rec.shape(search_adjust)[0];
        let k2 = 2 * self.k();
        let t = rec.conv2d(exemplar_feat, template_adjust, 1)?;
        let (_, th, tw) = rec.value(t).chw()?;
        let kernels = rec.reshape(t, vec![k2, c, th, tw])?;
        let s = rec.conv2d(search_feat, search_adjust, 1)?;
        let corr = rec.conv2d(s, kernels, 1)?;
        let (_, m1, m2) = rec.value(corr).chw()?;
        let scaled = rec.scale(corr, self.logit_scale / (c * th * tw) as f64);
        if self.fg_bias == 0.0 {
            return Ok(scaled);
        }
        let mut bias = Tensor::zeros(vec![k2, m1, m2]);
        bias.data_mut()[self.k() * m1 * m2..].fill(-self.fg_bias);
        let bias = rec.constant(bias);
        rec.add(scaled, bias)
    }

    /// Rearrange 2k x M x M logits into N x 2 `[background, foreground]`
    /// rows, one per anchor (anchor-major, then row-major cells).
    pub fn anchor_rows(&self, rec: &mut Record, logits: Var) -> Result<Var> {
        let k = self.k();
        let shape = rec.shape(logits).to_vec();
        let plane = shape[1] * shape[2];
        let flat = rec.reshape(logits, vec![2 * k * plane])?;
        let mut idx = Vec::with_capacity(2 * k * plane);
        for a in 0..k {
            for p in 0..plane {
                idx.push(a * plane + p);
                idx.push((k + a) * plane + p);
            }
        }
        let g = rec.gather(flat, idx)?;
        rec.reshape(g, vec![k * plane, 2])
    }

    /// Per-cell maximum over anchors of the foreground probability.
    pub fn foreground_map(&self, logits: &Tensor) -> Tensor {
        let k = self.k();
        let (m1, m2) = (logits.shape()[1], logits.shape()[2]);
        let plane = m1 * m2;
        let d = logits.data();
        let mut out = vec![f64::NEG_INFINITY; plane];
        for a in 0..k {
            for p in 0..plane {
                let diff = d[(k + a) * plane + p] - d[a * plane + p];
                let prob = 1.0 / (1.0 + (-diff).exp());
                out[p] = out[p].max(prob);
            }
        }
        Tensor::new(vec![m1, m2], out).expect("map shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Symmetric(SymmetricHead),
    Rpn(RpnHead),
}

/// A complete Siamese victim: shared embedder plus head.
#[derive(Clone, Debug, PartialEq)]
pub struct Victim {
    pub name: String,
    pub seed: u64,
    pub embedder: Embedder,
    pub head: Head,
}

/// Victim recipe: head kind, seed and geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimSpec {
    pub name: String,
    pub head: HeadKind,
    pub seed: u64,
    #[serde(default)]
    pub geometry: NetGeometry,
    #[serde(default)]
    pub rpn: RpnConfig,
}

impl VictimSpec {
    pub fn symmetric(name: &str, seed: u64) -> Self {
        VictimSpec {
            name: name.into(),
            head: HeadKind::Symmetric,
            seed,
            geometry: NetGeometry::default(),
            rpn: RpnConfig::default(),
        }
    }

    pub fn rpn(name: &str, seed: u64) -> Self {
        VictimSpec {
            head: HeadKind::Rpn,
            ..Self::symmetric(name, seed)
        }
    }

    pub fn build(&self) -> Result<Victim> {
        let embedder = Embedder::init(self.seed, self.geometry.clone())?;
        let head = match self.head {
            HeadKind::Symmetric => Head::Symmetric(SymmetricHead),
            HeadKind::Rpn => Head::Rpn(RpnHead::init(self.seed, &self.geometry, &self.rpn)?),
        };
        Ok(Victim {
            name: self.name.clone(),
            seed: self.seed,
            embedder,
            head,
        })
    }
}

impl Victim {
    pub fn kind(&self) -> HeadKind {
        match self.head {
            Head::Symmetric(_) => HeadKind::Symmetric,
            Head::Rpn(_) => HeadKind::Rpn,
        }
    }

    pub fn geometry(&self) -> &NetGeometry {
        &self.embedder.geometry
    }

    /// Score-map extent M.
    pub fn map_size(&self) -> Result<usize> {
        match &self.head {
            Head::Symmetric(_) => {
                let g = self.geometry();
                Ok(g.feature_size(g.search_size)? - g.feature_size(g.exemplar_size)? + 1)
            }
            Head::Rpn(h) => Ok(h.anchors.map_size),
        }
    }

    /// Raw head output on a record: the normalized score map (symmetric)
    /// or 2k x M x M logits (RPN).
    pub fn head_output(
        &self,
        rec: &mut Record,
        vars: &EmbedderVars,
        z_img: Var,
        x_img: Var,
    ) -> Result<Var> {
        let zf = self.embedder.embed(rec, vars, z_img)?;
        let xf = self.embedder.embed(rec, vars, x_img)?;
        match &self.head {
            Head::Symmetric(h) => h.score(rec, zf, xf),
            Head::Rpn(h) => h.logits(rec, zf, xf),
        }
    }

    /// Symmetric score map for a pair of images.
    pub fn symmetric_score(&self, z_img: &Tensor, x_img: &Tensor) -> Result<Tensor> {
        let Head::Symmetric(h) = &self.head else {
            return Err(Error::arg("symmetric_score needs a symmetric head"));
        };
        let mut rec = Record::new();
        let vars = self.embedder.register(&mut rec);
        let z = rec.constant(z_img.clone());
        let x = rec.constant(x_img.clone());
        let zf = self.embedder.embed(&mut rec, &vars, z)?;
        let xf = self.embedder.embed(&mut rec, &vars, x)?;
        let m = h.score(&mut rec, zf, xf)?;
        Ok(rec.value(m).clone())
    }

    /// RPN classification logits for a pair of images.
    pub fn rpn_cls_logits(&self, z_img: &Tensor, x_img: &Tensor) -> Result<Tensor> {
        let Head::Rpn(h) = &self.head else {
            return Err(Error::arg("rpn_cls_logits needs an RPN head"));
        };
        let mut rec = Record::new();
        let vars = self.embedder.register(&mut rec);
        let z = rec.constant(z_img.clone());
        let x = rec.constant(x_img.clone());
        let zf = self.embedder.embed(&mut rec, &vars, z)?;
        let xf = self.embedder.embed(&mut rec, &vars, x)?;
        let l = h.logits(&mut rec, zf, xf)?;
        Ok(rec.value(l).clone())
    }

    /// Tracking response from cached exemplar features: the score map for
    /// the symmetric head, per-cell max foreground probability for RPN.
    pub fn response(&self, exemplar_feat: &Tensor, x_img: &Tensor) -> Result<Tensor> {
        let mut rec = Record::new();
        let vars = self.embedder.register(&mut rec);
        let x = rec.constant(x_img.clone());
        let xf = self.embedder.embed(&mut rec, &vars, x)?;
        let zf = rec.constant(exemplar_feat.clone());
        match &self.head {
            Head::Symmetric(h) => {
                let m = h.score(&mut rec, zf, xf)?;
                Ok(rec.value(m).clone())
            }
            Head::Rpn(h) => {
                let l = h.logits(&mut rec, zf, xf)?;
                Ok(h.foreground_map(rec.value(l)))
            }
        }
    }
}
