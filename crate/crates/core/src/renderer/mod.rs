//! Differentiable planar billboard renderer.
//!
//! A textured parallelogram is placed on a canvas by an affine view
//! (scale, shear, rotation, translation), lit by a scalar gain and
//! composited over a solid or gradient background. Gradients flow to the
//! texture through bilinear sampling.

mod render;
mod scene;
mod texture;
mod view;

pub use render::{
    coverage, render, render_image, render_onto, solid_image, target_box, transformed_corners,
    Canvas, Coverage, SyntheticOccluder,
};
pub use scene::{render_sequence, Background, Keyframe, Occluder, Pose, Scene};
pub use texture::{load_png, save_png, TextureMap};
pub use view::{PlanarObject, ViewParams};

#[cfg(test)]
mod tests;
