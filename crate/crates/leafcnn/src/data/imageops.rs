//! Image decoding, bilinear resizing, normalization and augmentation.
//!
//! JPEG decoding goes through the `image` crate; resampling and the
//! geometric augmentations are implemented here so their semantics are
//! pinned: bilinear interpolation, reflect fill for rotation, flips as
//! exact permutations.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Xoshiro256PlusPlus;
use crate::tensor::{Shape, Tensor};

pub const IMG_SIZE: usize = 256;
pub const CHANNELS: usize = 3;

/// Interleaved RGB byte image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ByteImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * CHANNELS);
        Self {
            width,
            height,
            data,
        }
    }

    fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Augmentation settings: each flip fires independently with its own
/// probability; rotation angle is uniform in +-(factor * full turn).
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    pub horizontal_flip_p: f64,
    pub vertical_flip_p: f64,
    pub rotation_factor: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            horizontal_flip_p: 0.5,
            vertical_flip_p: 0.5,
            rotation_factor: 0.2,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.horizontal_flip_p, self.vertical_flip_p] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::argument(format!("flip probability {p} not in [0,1]")));
            }
        }
        if self.rotation_factor < 0.0 {
            return Err(Error::argument("rotation factor must be >= 0"));
        }
        Ok(())
    }
}

/// Decode a JPEG (or PNG) file and bilinearly resize to 256x256 RGB.
/// Images already at the target size pass through untouched.
pub fn decode_resize(path: &Path) -> Result<ByteImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let src = ByteImage::new(w, h, rgb.into_raw());
    if w == IMG_SIZE && h == IMG_SIZE {
        return Ok(src);
    }
    Ok(bilinear_resize(&src, IMG_SIZE, IMG_SIZE))
}

/// Bilinear resampling with edge clamping, half-pixel centre alignment.
pub fn bilinear_resize(src: &ByteImage, out_w: usize, out_h: usize) -> ByteImage {
    let mut out = vec![0u8; out_w * out_h * CHANNELS];
    let sx = src.width as f64 / out_w as f64;
    let sy = src.height as f64 / out_h as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let (p00, p01) = (src.pixel(x0, y0), src.pixel(x1, y0));
            let (p10, p11) = (src.pixel(x0, y1), src.pixel(x1, y1));
            let dst = (oy * out_w + ox) * CHANNELS;
            for c in 0..CHANNELS {
                let top = p00[c] as f64 * (1.0 - wx) + p01[c] as f64 * wx;
                let bot = p10[c] as f64 * (1.0 - wx) + p11[c] as f64 * wx;
                out[dst + c] = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ByteImage::new(out_w, out_h, out)
}

/// byte/255 into a (1, h, w, 3) tensor with values in [0, 1].
pub fn normalize(img: &ByteImage) -> Tensor<f32> {
    let shape = Shape::new(&[1, img.height, img.width, CHANNELS]).expect("valid image shape");
    let data = img.data.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

pub fn flip_horizontal(img: &ByteImage) -> ByteImage {
    let mut out = img.data.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let src = (y * img.width + x) * CHANNELS;
            let dst = (y * img.width + (img.width - 1 - x)) * CHANNELS;
            out[dst..dst + CHANNELS].copy_from_slice(&img.data[src..src + CHANNELS]);
        }
    }
    ByteImage::new(img.width, img.height, out)
}

pub fn flip_vertical(img: &ByteImage) -> ByteImage {
    let mut out = img.data.clone();
    let row = img.width * CHANNELS;
    for y in 0..img.height {
        let src = y * row;
        let dst = (img.height - 1 - y) * row;
        out[dst..dst + row].copy_from_slice(&img.data[src..src + row]);
    }
    ByteImage::new(img.width, img.height, out)
}

/// Reflect a sample coordinate into [0, n) (mirror across the borders,
/// edge pixel not repeated).
fn reflect(mut v: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    v = v.rem_euclid(period);
    if v >= n {
        period - v
    } else {
        v
    }
}

/// Rotate about the image centre by `angle` radians, bilinear sampling
/// with reflect fill.
pub fn rotate(img: &ByteImage, angle: f64) -> ByteImage {
    if angle == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![0u8; w * h * CHANNELS];
    for oy in 0..h {
        for ox in 0..w {
            // Inverse map: source position that lands on (ox, oy).
            let dx = ox as f64 - cx;
            let dy = oy as f64 - cy;
            let sxf = cx + dx * cos + dy * sin;
            let syf = cy - dx * sin + dy * cos;
            let x0 = sxf.floor() as i64;
            let y0 = syf.floor() as i64;
            let wx = sxf - x0 as f64;
            let wy = syf - y0 as f64;
            let xs = [reflect(x0, w as i64) as usize, reflect(x0 + 1, w as i64) as usize];
            let ys = [reflect(y0, h as i64) as usize, reflect(y0 + 1, h as i64) as usize];
            let dst = (oy * w + ox) * CHANNELS;
            for c in 0..CHANNELS {
                let p00 = img.pixel(xs[0], ys[0])[c] as f64;
                let p01 = img.pixel(xs[1], ys[0])[c] as f64;
                let p10 = img.pixel(xs[0], ys[1])[c] as f64;
                let p11 = img.pixel(xs[1], ys[1])[c] as f64;
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out[dst + c] = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ByteImage::new(w, h, out)
}

/// Apply the configured augmentations. The draw order (horizontal flip,
/// vertical flip, angle) is fixed so results depend only on the rng state.
pub fn augment(img: &ByteImage, rng: &mut Xoshiro256PlusPlus, config: &AugmentConfig) -> ByteImage {
    if !config.enabled {
        return img.clone();
    }
    let mut out = img.clone();
    if rng.next_f64() < config.horizontal_flip_p {
        out = flip_horizontal(&out);
    }
    if rng.next_f64() < config.vertical_flip_p {
        out = flip_vertical(&out);
    }
    if config.rotation_factor > 0.0 {
        let angle = rng.uniform_symmetric(config.rotation_factor * std::f64::consts::TAU);
        out = rotate(&out, angle);
    }
    out
}
