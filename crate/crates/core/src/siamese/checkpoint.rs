use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::embedder::{Embedder, NetGeometry};
use super::heads::{AnchorSet, Head, HeadKind, RpnHead, SymmetricHead, Victim};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STAWGT01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON side of a checkpoint: everything except the weight values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub name: String,
    pub head: HeadKind,
    pub seed: u64,
    pub geometry: NetGeometry,
    #[serde(default)]
    pub anchors: Option<AnchorSet>,
    #[serde(default)]
    pub logit_scale: Option<f64>,
    #[serde(default)]
    pub fg_bias: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

/// Manifest path for a weights file: `x.bin` -> `x.json`.
pub fn manifest_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

fn named_tensors(victim: &Victim) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = victim
        .embedder
        .kernels
        .iter()
        .enumerate()
        .map(|(i, k)| (format!("embedder.{i}"), k))
        .collect();
    if let Head::Rpn(h) = &victim.head {
        out.push(("rpn.template_adjust".into(), &h.template_adjust));
        out.push(("rpn.search_adjust".into(), &h.search_adjust));
    }
    out
}

/// Write `victim` as a flat little-endian weights file plus a JSON manifest
/// next to it.
///
/// Layout: magic (8 bytes), version (u32), tensor count (u32), then per
/// tensor its rank (u32) and dims (u64 each), then all values as f64.
pub fn save_victim(victim: &Victim, weights: &Path) -> Result<()> {
    let tensors = named_tensors(victim);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, t) in &tensors {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(weights)?.write_all(&buf)?;

    let (anchors, logit_scale, fg_bias) = match &victim.head {
        Head::Rpn(h) => (
            Some(h.anchors.clone()),
            Some(h.logit_scale),
            Some(h.fg_bias),
        ),
        Head::Symmetric(_) => (None, None, None),
    };
    let manifest = Manifest {
        version: VERSION,
        name: victim.name.clone(),
        head: victim.kind(),
        seed: victim.seed,
        geometry: victim.embedder.geometry.clone(),
        anchors,
        logit_scale,
        fg_bias,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    std::fs::write(
        manifest_path(weights),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated weights file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Read the raw shape table and tensors of a weights file.
pub fn read_weights(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(shape);
    }
    let mut out = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(out)
}

pub fn load_victim(weights: &Path) -> Result<Victim> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(manifest_path(weights))?)?;
    if manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    manifest.geometry.validate()?;
    let tensors = read_weights(weights)?;
    if tensors.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(
            "manifest and weights disagree on tensor count".into(),
        ));
    }
    for (t, e) in tensors.iter().zip(&manifest.tensors) {
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", e.name)));
        }
    }
    let layers = manifest.geometry.layers.len();
    let mut it = tensors.into_iter();
    let kernels: Vec<Tensor> = it.by_ref().take(layers).collect();
    if kernels.len() != layers {
        return Err(Error::Checkpoint("missing embedder tensors".into()));
    }
    let head = match manifest.head {
        HeadKind::Symmetric => Head::Symmetric(SymmetricHead),
        HeadKind::Rpn => {
            let (Some(template_adjust), Some(search_adjust)) = (it.next(), it.next()) else {
                return Err(Error::Checkpoint("missing rpn tensors".into()));
            };
            Head::Rpn(RpnHead {
                template_adjust,
                search_adjust,
                anchors: manifest
                    .anchors
                    .ok_or_else(|| Error::Checkpoint("missing anchors".into()))?,
                logit_scale: manifest
                    .logit_scale
                    .ok_or_else(|| Error::Checkpoint("missing logit scale".into()))?,
                fg_bias: manifest.fg_bias.unwrap_or(0.0),
            })
        }
    };
    if it.next().is_some() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(Victim {
        name: manifest.name,
        seed: manifest.seed,
        embedder: Embedder {
            geometry: manifest.geometry,
            kernels,
        },
        head,
    })
}
