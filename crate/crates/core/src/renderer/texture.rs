use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const SIDECAR_MAGIC: &[u8; 8] = b"STATEX01";

/// RGB texture stored channel-major as a 3xHxW tensor with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap {
    data: Tensor,
}

impl TextureMap {
    pub fn from_tensor(data: Tensor) -> Result<Self> {
        let (c, h, w) = data.chw()?;
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "texture must be 3xHxW, got {:?}",
                data.shape()
            )));
        }
        if let Some(bad) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("texture value {bad} outside [0, 1]")));
        }
        Ok(TextureMap { data })
    }

    pub fn solid(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut t = Tensor::zeros(vec![3, height, width]);
        let plane = height * width;
        for (c, &v) in rgb.iter().enumerate() {
            t.data_mut()[c * plane..(c + 1) * plane].fill(v);
        }
        Self::from_tensor(t)
    }

    /// Procedural "car" livery: body, cabin, windows, wheels and a stripe,
    /// laid out in relative coordinates so any resolution works.
    pub fn car(height: usize, width: usize) -> Result<Self> {
        let mut t = Tensor::zeros(vec![3, height, width]);
        let plane = height * width;
        for y in 0..height {
            for x in 0..width {
                let v = (y as f64 + 0.5) / height as f64;
                let u = (x as f64 + 0.5) / width as f64;
                let rgb = car_color(u, v);
                for (c, v) in rgb.into_iter().enumerate() {
                    t.data_mut()[c * plane + y * width + x] = v;
                }
            }
        }
        Self::from_tensor(t)
    }

    /// I.i.d. uniform [0, 1] texels.
    pub fn uniform_noise(height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let data = (0..3 * height * width).map(|_| rng.gen::<f64>()).collect();
        Self::from_tensor(Tensor::new(vec![3, height, width], data)?)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Round every value to the nearest 8-bit level.
    pub fn quantized(&self) -> TextureMap {
        TextureMap {
            data: self.data.map(|v| (v * 255.0).round() / 255.0),
        }
    }

    pub fn l2_distance(&self, other: &TextureMap) -> Result<f64> {
        self.data.l2_distance(&other.data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(&self.data, path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::from_tensor(load_png(path)?)
    }

    /// Lossless float64 copy: magic, height and width as u32, then values,
    /// all little-endian.
    pub fn save_sidecar(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SIDECAR_MAGIC)?;
        w.write_all(&(self.height() as u32).to_le_bytes())?;
        w.write_all(&(self.width() as u32).to_le_bytes())?;
        for v in self.data.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_sidecar(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::arg("not a texture sidecar file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let h = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let w = u32::from_le_bytes(b4) as usize;
        let mut data = vec![0.0; 3 * h * w];
        let mut b8 = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Self::from_tensor(Tensor::new(vec![3, h, w], data)?)
    }
}

fn car_color(u: f64, v: f64) -> [f64; 3] {
    const BODY: [f64; 3] = [0.85, 0.12, 0.10];
    const CABIN: [f64; 3] = [0.15, 0.20, 0.55];
    const GLASS: [f64; 3] = [0.70, 0.88, 0.97];
    const TYRE: [f64; 3] = [0.05, 0.05, 0.05];
    const STRIPE: [f64; 3] = [0.97, 0.97, 0.92];
    const PANEL: [f64; 3] = [0.95, 0.80, 0.20];

    let wheel = |cu: f64| ((u - cu) / 0.09).powi(2) + ((v - 0.84) / 0.16).powi(2) <= 1.0;
    if wheel(0.22) || wheel(0.78) {
        return TYRE;
    }
    if v < 0.42 {
        if (0.25..0.75).contains(&u) {
            let window = (0.08..0.36).contains(&v)
                && ((0.31..0.48).contains(&u) || (0.53..0.69).contains(&u));
            return if window { GLASS } else { CABIN };
        }
        return PANEL;
    }
    if (0.55..0.63).contains(&v) {
        return STRIPE;
    }
    if v < 0.8 {
        return BODY;
    }
    PANEL
}

/// Write a 3xHxW image in [0, 1] as 8-bit RGB, quantized by round(v * 255).
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::InvalidShape(format!(
            "png needs 3 channels, got {c}"
        )));
    }
    let plane = h * w;
    let d = img.data();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    });
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for (x, y, p) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = p[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        let t = Tensor::full(vec![3, 2, 2], 1.5);
        assert!(TextureMap::from_tensor(t).is_err());
    }

    #[test]
    fn car_is_valid_and_varied() {
        let car = TextureMap::car(16, 24).unwrap();
        let t = car.tensor();
        assert!(t.max() <= 1.0 && t.min() >= 0.0);
        assert!(t.max() - t.min() > 0.8);
    }

    #[test]
    fn png_round_trip_is_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let car = TextureMap::car(8, 12).unwrap();
        let p = dir.path().join("car.png");
        car.save_png(&p).unwrap();
        let back = TextureMap::load_png(&p).unwrap();
        assert_eq!(back, car.quantized());
    }

    #[test]
    fn sidecar_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(
            vec![3, 2, 3],
            (0..18).map(|i| i as f64 / 17.0 * 0.999).collect(),
        )
        .unwrap();
        let tex = TextureMap::from_tensor(t).unwrap();
        let p = dir.path().join("tex.f64");
        tex.save_sidecar(&p).unwrap();
        assert_eq!(TextureMap::load_sidecar(&p).unwrap(), tex);
    }
}
