use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::texture::TextureMap;
use super::view::{PlanarObject, ViewParams};
use crate::autodiff::{Border, Record, SamplePlan, Tensor, Var};
use crate::error::{Error, Result};
use crate::tracker::BBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas { width, height }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }
}

/// Optional synthetic occluder drawn over the target, positioned by
/// [`ViewParams::occluder_phase`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOccluder {
    pub width: f64,
    pub color: [f64; 3],
}

/// Which canvas pixels show the target, and where they sample the texture.
#[derive(Clone, Debug)]
pub struct Coverage {
    /// Flat `y * width + x` canvas indices.
    pub pixels: Vec<usize>,
    /// Continuous `(row, col)` texel positions, one per pixel.
    pub texels: Vec<(f64, f64)>,
    /// Axis-aligned extent of the transformed quad.
    pub bbox: BBox,
}

/// Canvas-space corners of the transformed quad.
pub fn transformed_corners(
    object: &PlanarObject,
    view: &ViewParams,
    canvas: Canvas,
) -> [[f64; 2]; 4] {
    let l = view.linear();
    let c = canvas.center();
    let t = view.translation;
    object.corners.map(|[x, y]| {
        [
            c[0] + t[0] + l[0][0] * x + l[0][1] * y,
            c[1] + t[1] + l[1][0] * x + l[1][1] * y,
        ]
    })
}

/// Ground-truth box: axis-aligned extent of the target under `view`.
pub fn target_box(object: &PlanarObject, view: &ViewParams, canvas: Canvas) -> Result<BBox> {
    let pts = transformed_corners(object, view, canvas);
    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for [x, y] in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    BBox::from_corners(x0, y0, x1, y1)
}

/// Rasterize the quad: every pixel centre inside the transformed
/// parallelogram (half-open in texture space) and not `blocked`.
pub fn coverage(
    object: &PlanarObject,
    view: &ViewParams,
    canvas: Canvas,
    tex_h: usize,
    tex_w: usize,
    blocked: &dyn Fn(usize, usize) -> bool,
) -> Result<Coverage> {
    object.validate()?;
    view.validate()?;
    let bbox = target_box(object, view, canvas)?;

    // canvas offset -> object space -> (u, v) along the quad axes
    let l = view.linear();
    let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::Degenerate("view transform is singular".into()));
    }
    let linv = [
        [l[1][1] / det, -l[0][1] / det],
        [-l[1][0] / det, l[0][0] / det],
    ];
    let (e1, e2) = object.axes();
    let edet = e1[0] * e2[1] - e1[1] * e2[0];
    // rows pre-scaled to texel units so axis-aligned maps stay exact
    let (fw, fh) = (tex_w as f64, tex_h as f64);
    let einv = [
        [e2[1] * fw / edet, -e2[0] * fw / edet],
        [-e1[1] * fh / edet, e1[0] * fh / edet],
    ];
    let origin = object.origin();
    let c = canvas.center();
    let t = view.translation;

    let xs = (bbox.x0().floor().max(0.0) as usize)
        ..(bbox.x1().ceil().min(canvas.width as f64).max(0.0) as usize);
    let ys = (bbox.y0().floor().max(0.0) as usize)
        ..(bbox.y1().ceil().min(canvas.height as f64).max(0.0) as usize);

    let mut pixels = Vec::new();
    let mut texels = Vec::new();
    for y in ys {
        for x in xs.clone() {
            let qx = x as f64 + 0.5 - c[0] - t[0];
            let qy = y as f64 + 0.5 - c[1] - t[1];
            let ox = linv[0][0] * qx + linv[0][1] * qy - origin[0];
            let oy = linv[1][0] * qx + linv[1][1] * qy - origin[1];
            let tu = einv[0][0] * ox + einv[0][1] * oy;
            let tv = einv[1][0] * ox + einv[1][1] * oy;
            if !(0.0..fw).contains(&tu) || !(0.0..fh).contains(&tv) || blocked(x, y) {
                continue;
            }
            pixels.push(y * canvas.width + x);
            texels.push((tv, tu));
        }
    }
    Ok(Coverage {
        pixels,
        texels,
        bbox,
    })
}

/// Solid-colour 3xHxW image.
pub fn solid_image(canvas: Canvas, rgb: [f64; 3]) -> Tensor {
    let plane = canvas.width * canvas.height;
    let mut t = Tensor::zeros(vec![3, canvas.height, canvas.width]);
    for (c, &v) in rgb.iter().enumerate() {
        t.data_mut()[c * plane..(c + 1) * plane].fill(v);
    }
    t
}

/// Paint the full-height vertical band `[x0, x1)` into `img`.
pub(crate) fn paint_band(img: &mut Tensor, x0: f64, x1: f64, rgb: [f64; 3]) {
    let (_, h, w) = img.chw().expect("image is CxHxW");
    let plane = h * w;
    for x in 0..w {
        let px = x as f64 + 0.5;
        if px < x0 || px >= x1 {
            continue;
        }
        for y in 0..h {
            for (c, &v) in rgb.iter().enumerate() {
                img.data_mut()[c * plane + y * w + x] = v;
            }
        }
    }
}

/// Render the target onto `base`, leaving `blocked` pixels untouched.
///
/// Target pixels are bilinear texture samples (border clamp) times the
/// lighting gain, clamped to [0, 1]. Gradients flow to `texture` only.
pub fn render_onto(
    rec: &mut Record,
    object: &PlanarObject,
    texture: Var,
    view: &ViewParams,
    base: &Tensor,
    blocked: &dyn Fn(usize, usize) -> bool,
) -> Result<Var> {
    let (tc, th, tw) = rec.value(texture).chw()?;
    if tc != 3 {
        return Err(Error::InvalidShape(format!("texture has {tc} channels")));
    }
    let (_, h, w) = base.chw()?;
    let canvas = Canvas::new(w, h);
    let cov = coverage(object, view, canvas, th, tw, blocked)?;
    let plan = Arc::new(SamplePlan::bilinear(th, tw, &cov.texels, Border::Clamp));
    let sampled = rec.sample(texture, plan)?;
    let lit = rec.scale(sampled, view.gain);
    let lit = rec.clamp(lit, 0.0, 1.0);
    rec.place(base, lit, cov.pixels)
}

/// Render the target over the view's solid background colour, plus the
/// synthetic occluder when one is given.
pub fn render(
    rec: &mut Record,
    object: &PlanarObject,
    texture: Var,
    view: &ViewParams,
    canvas: Canvas,
    occluder: Option<&SyntheticOccluder>,
) -> Result<Var> {
    let mut base = solid_image(canvas, view.background);
    let band = match occluder {
        Some(occ) if occ.width > 0.0 => {
            let bbox = target_box(object, view, canvas)?;
            let x = bbox.x0() + view.occluder_phase * bbox.w;
            let (x0, x1) = (x - occ.width / 2.0, x + occ.width / 2.0);
            paint_band(&mut base, x0, x1, occ.color);
            Some((x0, x1))
        }
        _ => None,
    };
    let blocked = move |x: usize, _y: usize| match band {
        Some((x0, x1)) => {
            let px = x as f64 + 0.5;
            px >= x0 && px < x1
        }
        None => false,
    };
    render_onto(rec, object, texture, view, &base, &blocked)
}

/// Forward-only convenience wrapper around [`render`].
pub fn render_image(
    object: &PlanarObject,
    texture: &TextureMap,
    view: &ViewParams,
    canvas: Canvas,
) -> Result<Tensor> {
    let mut rec = Record::new();
    let t = rec.constant(texture.tensor().clone());
    let img = render(&mut rec, object, t, view, canvas, None)?;
    Ok(rec.value(img).clone())
}
