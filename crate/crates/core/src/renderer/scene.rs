use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::{paint_band, render_onto, solid_image, target_box, Canvas};
use super::texture::TextureMap;
use super::view::{PlanarObject, ViewParams};
use crate::autodiff::{Record, Tensor};
use crate::error::{Error, Result};
use crate::tracker::BBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    Solid {
        color: [f64; 3],
    },
    /// Vertical blend from `top` to `bottom`.
    Gradient {
        top: [f64; 3],
        bottom: [f64; 3],
    },
}

/// Opaque full-height vertical bar, drawn over the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occluder {
    /// Centre column in pixels.
    pub x: f64,
    pub width: f64,
    pub color: [f64; 3],
}

impl Occluder {
    pub fn covers(&self, px: usize) -> bool {
        let c = px as f64 + 0.5;
        c >= self.x - self.width / 2.0 && c < self.x + self.width / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: usize,
    pub center: [f64; 2],
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// A video description: canvas, background, occluders and a keyframed
/// target trajectory (linear interpolation between keyframes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: Background,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    pub keyframes: Vec<Keyframe>,
}

/// Target pose for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub center: [f64; 2],
    pub scale: f64,
}

impl Scene {
    /// Bridge-style default: a car crossing left to right behind five
    /// evenly spaced columns over 60 frames.
    pub fn bridge() -> Scene {
        Scene {
            width: 256,
            height: 96,
            frames: 60,
            background: Background::Solid {
                color: [0.55, 0.55, 0.55],
            },
            occluders: [56.0, 92.0, 128.0, 164.0, 200.0]
                .iter()
                .map(|&x| Occluder {
                    x,
                    width: 4.0,
                    color: [0.3, 0.3, 0.3],
                })
                .collect(),
            keyframes: vec![
                Keyframe {
                    frame: 0,
                    center: [24.0, 48.0],
                    scale: 1.0,
                },
                Keyframe {
                    frame: 59,
                    center: [232.0, 48.0],
                    scale: 1.0,
                },
            ],
        }
    }

    /// The bridge scene seen from an angle where nothing occludes the target.
    pub fn unoccluded() -> Scene {
        Scene {
            occluders: Vec::new(),
            ..Scene::bridge()
        }
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("scene extents must be positive"));
        }
        if self.frames == 0 || self.keyframes.is_empty() {
            return Err(Error::arg("scene trajectory is empty"));
        }
        for o in &self.occluders {
            if o.width <= 0.0
                || o.x - o.width / 2.0 < 0.0
                || o.x + o.width / 2.0 > self.width as f64
            {
                return Err(Error::arg(format!(
                    "occluder at x={} outside the image",
                    o.x
                )));
            }
        }
        if self.keyframes.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(Error::arg("keyframes must be strictly increasing"));
        }
        if self
            .keyframes
            .iter()
            .any(|k| k.frame >= self.frames || k.scale <= 0.0)
        {
            return Err(Error::arg(
                "keyframe outside the video or with non-positive scale",
            ));
        }
        let colors = self
            .occluders
            .iter()
            .map(|o| o.color)
            .chain(match &self.background {
                Background::Solid { color } => vec![*color],
                Background::Gradient { top, bottom } => vec![*top, *bottom],
            });
        for c in colors {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::arg("scene colour outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// One pose per frame.
    pub fn trajectory(&self) -> Vec<Pose> {
        (0..self.frames)
            .map(|f| {
                let ks = &self.keyframes;
                let pose = |k: &Keyframe| Pose {
                    center: k.center,
                    scale: k.scale,
                };
                if f <= ks[0].frame {
                    return pose(&ks[0]);
                }
                if f >= ks[ks.len() - 1].frame {
                    return pose(&ks[ks.len() - 1]);
                }
                let i = ks
                    .iter()
                    .rposition(|k| k.frame <= f)
                    .expect("bracketing keyframe");
                let (a, b) = (&ks[i], &ks[i + 1]);
                let t = (f - a.frame) as f64 / (b.frame - a.frame) as f64;
                let lerp = |x: f64, y: f64| x + t * (y - x);
                Pose {
                    center: [
                        lerp(a.center[0], b.center[0]),
                        lerp(a.center[1], b.center[1]),
                    ],
                    scale: lerp(a.scale, b.scale),
                }
            })
            .collect()
    }

    /// Background colour used for the view parameters of a frame.
    fn mean_background(&self) -> [f64; 3] {
        match &self.background {
            Background::Solid { color } => *color,
            Background::Gradient { top, bottom } => [0, 1, 2].map(|c| (top[c] + bottom[c]) / 2.0),
        }
    }

    pub fn view_for(&self, pose: &Pose) -> ViewParams {
        let c = self.canvas().center();
        ViewParams {
            scale: pose.scale,
            translation: [pose.center[0] - c[0], pose.center[1] - c[1]],
            background: self.mean_background(),
            ..ViewParams::default()
        }
    }

    /// Background with occluders painted in.
    pub fn base_image(&self) -> Tensor {
        let canvas = self.canvas();
        let mut img = match &self.background {
            Background::Solid { color } => solid_image(canvas, *color),
            Background::Gradient { top, bottom } => {
                let mut t = Tensor::zeros(vec![3, self.height, self.width]);
                let plane = self.width * self.height;
                for y in 0..self.height {
                    let a = if self.height > 1 {
                        y as f64 / (self.height - 1) as f64
                    } else {
                        0.0
                    };
                    for c in 0..3 {
                        let v = top[c] + a * (bottom[c] - top[c]);
                        t.data_mut()[c * plane + y * self.width..c * plane + (y + 1) * self.width]
                            .fill(v);
                    }
                }
                t
            }
        };
        for o in &self.occluders {
            paint_band(&mut img, o.x - o.width / 2.0, o.x + o.width / 2.0, o.color);
        }
        img
    }

    pub fn occluded(&self, x: usize) -> bool {
        self.occluders.iter().any(|o| o.covers(x))
    }
}

/// Render every frame of `scene` with the target textured by `texture`.
/// Returns the frames and per-frame ground-truth boxes.
pub fn render_sequence(
    scene: &Scene,
    object: &PlanarObject,
    texture: &TextureMap,
) -> Result<(Vec<Tensor>, Vec<BBox>)> {
    scene.validate()?;
    let base = scene.base_image();
    let blocked = |x: usize, _y: usize| scene.occluded(x);
    let mut frames = Vec::with_capacity(scene.frames);
    let mut boxes = Vec::with_capacity(scene.frames);
    for pose in scene.trajectory() {
        let view = scene.view_for(&pose);
        let mut rec = Record::new();
        let t = rec.constant(texture.tensor().clone());
        let img = render_onto(&mut rec, object, t, &view, &base, &blocked)?;
        frames.push(rec.value(img).clone());
        boxes.push(target_box(object, &view, scene.canvas())?);
    }
    Ok((frames, boxes))
}
