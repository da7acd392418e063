use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::attack::AttackConfig;
use crate::eval::DRIFT_TAU;
use crate::siamese::{FinetuneConfig, VictimSpec};

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub drift_tau: f64,
    /// Texture tracked for the clean baseline; the built-in car when absent.
    #[serde(default)]
    pub baseline_texture: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            drift_tau: DRIFT_TAU,
            baseline_texture: None,
        }
    }
}

/// A named texture file for the transfer study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTexture {
    pub name: String,
    pub path: PathBuf,
}

/// Everything a command needs. Every field has a default, so an empty
/// JSON object is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene JSON; the built-in bridge scene when absent.
    pub scene: Option<PathBuf>,
    /// Drop every occluder from the scene.
    pub no_occluders: bool,
    /// Target rectangle, width and height in texels.
    pub object: [f64; 2],
    /// Input texture (PNG, or a `.f64` sidecar); the built-in car when absent.
    pub texture: Option<PathBuf>,
    /// Built-in texture extents, height and width.
    pub texture_size: [usize; 2],
    pub victims: Vec<VictimSpec>,
    /// Weight checkpoints loaded in addition to `victims`.
    pub checkpoints: Vec<PathBuf>,
    /// Victim names a command acts on; empty means all for tracking and the
    /// first victim for attacks. Several names make the attack combined.
    pub targets: Vec<String>,
    /// Cosine window weight.
    pub penalty: f64,
    pub attack: AttackConfig,
    pub finetune: Option<FinetuneConfig>,
    pub eval: EvalConfig,
    /// Textures for the transfer study; when empty, one adversarial texture
    /// per victim plus a combined one are generated.
    pub transfer_textures: Vec<NamedTexture>,
    /// Texel coordinates probed per victim by gradcheck.
    pub gradcheck_coords: usize,
    pub gradcheck_tolerance: f64,
    pub out: PathBuf,
    /// Drives every random choice: attack sampling, fine-tuning and the
    /// noise texture.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: None,
            no_occluders: false,
            object: [24.0, 16.0],
            texture: None,
            texture_size: [16, 24],
            victims: default_victims(),
            checkpoints: Vec::new(),
            targets: Vec::new(),
            penalty: 0.3,
            attack: AttackConfig::default(),
            finetune: None,
            eval: EvalConfig::default(),
            transfer_textures: Vec::new(),
            gradcheck_coords: 100,
            gradcheck_tolerance: 1e-4,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// The two stock victims: a symmetric head and an RPN head on separate
/// backbones.
pub fn default_victims() -> Vec<VictimSpec> {
    vec![
        VictimSpec::symmetric("siamfc", 1),
        VictimSpec::rpn("siamrpn", 2),
    ]
}

impl RunConfig {
    /// Overlay `path` on the defaults, apply `key=value` overrides, then check
    /// referenced files exist.
    pub fn resolve(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
        let mut value =
            serde_json::to_value(RunConfig::default()).expect("default config serializes");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("malformed config {}: {e}", p.display())))?;
            if !file.is_object() {
                return Err(CliError::Usage("config must be a JSON object".into()));
            }
            merge(&mut value, file);
        }
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let mut paths: Vec<&Path> = Vec::new();
        paths.extend(self.scene.as_deref());
        paths.extend(self.texture.as_deref());
        paths.extend(self.eval.baseline_texture.as_deref());
        paths.extend(self.checkpoints.iter().map(PathBuf::as_path));
        paths.extend(self.transfer_textures.iter().map(|t| t.path.as_path()));
        for p in paths {
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Overlay `patch` onto `base`: objects merge key by key, anything else
/// replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Set a dotted key inside a JSON object. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("bad --set key {key:?}")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!("--set {key}: {part:?} is not inside an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}
