//! Victim networks: a shared convolutional embedder with either a
//! symmetric correlation head or an anchor-based RPN classification head.

mod calibrate;
mod checkpoint;
mod embedder;
mod heads;

pub use calibrate::{
    calibrate_tracker, finetune, CalibrationReport, FinetuneConfig, CALIBRATION_MIN_IOU,
};
pub use checkpoint::{
    load_victim, manifest_path, read_weights, save_victim, Manifest, TensorEntry, MAGIC, VERSION,
};
pub use embedder::{Embedder, EmbedderVars, LayerSpec, NetGeometry};
pub use heads::{AnchorSet, Head, HeadKind, RpnConfig, RpnHead, SymmetricHead, Victim, VictimSpec};

#[cfg(test)]
mod tests;
