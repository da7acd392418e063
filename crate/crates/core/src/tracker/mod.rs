//! Siamese tracking loop: context crops, cosine-window penalty,
//! localization and the closed-form mislead condition.

mod bbox;
mod crop;
mod track;
mod window;

pub use bbox::BBox;
pub use crop::{crop_and_scale, CropGeometry, CropRole, CropSpec};
pub use track::{
    crop_image, crop_spec_for, exemplar_image, normalize_map, read_track_csv, track, visible_map,
    write_track_csv, TrackPoint, TrackerState,
};
pub use window::{
    apply_penalty, check_mislead, hann, mislead_threshold, penalized_score, CosineWindow,
};
