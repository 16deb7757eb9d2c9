//! Raster images, cubic resampling, the iterative downsample/super-resolve
//! degradation loop, patch extraction and PSNR.

mod codec;
mod dssr;
mod resize;

pub use codec::{decode_image, encode_image, encode_png, read_image, write_image};
pub use dssr::{ds_sr_iterate, BuiltinCubic, DsSrStep, ExternalSr, Upscaler};
pub use resize::{cubic_weight, resize_bicubic, resize_cubic, CUBIC_A};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }
}

/// Resampling factor strictly greater than one.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Config(format!("scale factor must be > 1, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ScaleFactor {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ScaleFactor> for f64 {
    fn from(f: ScaleFactor) -> f64 {
        f.0
    }
}

impl std::fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Round half away from zero, as used for every derived image dimension.
pub fn round_dim(v: f64) -> usize {
    v.round().max(0.0) as usize
}

/// Non-overlapping `size`×`size` patches from the top-left, partial border
/// patches dropped, values scaled to `[0, 1]`.
pub fn extract_patches(img: &ImageRGB, size: usize) -> Result<Tensor4> {
    if size == 0 || img.width < size || img.height < size {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than patch size {size}",
            img.width, img.height
        )));
    }
    let cols = img.width / size;
    let rows = img.height / size;
    let mut data = Vec::with_capacity(cols * rows * size * size * 3);
    for py in 0..rows {
        for px in 0..cols {
            for y in 0..size {
                let start = ((py * size + y) * img.width + px * size) * 3;
                data.extend(img.pixels[start..start + size * 3].iter().map(|&v| v as f64 / 255.0));
            }
        }
    }
    Tensor4::from_vec([rows * cols, size, size, 3], data)
}

/// `10·log10(255² / MSE)` over all channels; identical images give `+inf`.
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "psnr of {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let sse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}
