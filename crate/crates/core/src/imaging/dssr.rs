use std::path::PathBuf;
use std::process::Command;

use super::{read_image, resize_bicubic, resize_cubic, round_dim, write_image, ImageRGB, ScaleFactor};
use crate::error::{Error, Result};

/// Something that interpolates an LR image up to requested dimensions.
pub trait Upscaler: Send + Sync {
    fn name(&self) -> &str;
    fn upscale(&self, lr: &ImageRGB, width: usize, height: usize) -> Result<ImageRGB>;
}

/// In-process cubic convolution upscaler.
#[derive(Clone, Debug)]
pub struct BuiltinCubic {
    pub name: String,
    pub a: f64,
}

impl BuiltinCubic {
    pub fn bicubic() -> Self {
        Self {
            name: "bicubic".into(),
            a: super::CUBIC_A,
        }
    }
}

impl Upscaler for BuiltinCubic {
    fn name(&self) -> &str {
        &self.name
    }

    fn upscale(&self, lr: &ImageRGB, width: usize, height: usize) -> Result<ImageRGB> {
        resize_cubic(lr, width, height, self.a)
    }
}

/// An SR program run as a subprocess:
/// `<program> [args..] --in <path> --out <path> --width W --height H`.
#[derive(Clone, Debug)]
pub struct ExternalSr {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Upscaler for ExternalSr {
    fn name(&self) -> &str {
        &self.name
    }

    fn upscale(&self, lr: &ImageRGB, width: usize, height: usize) -> Result<ImageRGB> {
        let fail = |message: String| Error::Plugin {
            plugin: self.name.clone(),
            message,
        };
        let dir = tempfile::tempdir().map_err(|e| fail(format!("tempdir: {e}")))?;
        let input = dir.path().join("in.ppm");
        let output = dir.path().join("out.ppm");
        write_image(&input, lr)?;
        let result = Command::new(&self.program)
            .args(&self.args)
            .arg("--in")
            .arg(&input)
            .arg("--out")
            .arg(&output)
            .arg("--width")
            .arg(width.to_string())
            .arg("--height")
            .arg(height.to_string())
            .output()
            .map_err(|e| fail(format!("spawn {}: {e}", self.program.display())))?;
        if !result.status.success() {
            return Err(fail(format!(
                "exit status {}; stderr: {}",
                result.status,
                String::from_utf8_lossy(&result.stderr).trim()
            )));
        }
        let hr = read_image(&output).map_err(|e| fail(format!("reading output: {e}")))?;
        if hr.dims() != (width, height) {
            return Err(fail(format!(
                "produced {}x{}, expected {width}x{height}",
                hr.width(),
                hr.height()
            )));
        }
        Ok(hr)
    }
}

/// One DS-SR cycle: the downsampled LR and the super-resolved HR built from it.
#[derive(Clone, Debug)]
pub struct DsSrStep {
    pub lr: ImageRGB,
    pub hr: ImageRGB,
}

/// Repeats downsample-by-`factor` then upscale-by-`factor`, each cycle
/// starting from the previous HR. Element `k - 1` holds iteration `k`.
pub fn ds_sr_iterate(
    img: &ImageRGB,
    factor: ScaleFactor,
    iterations: usize,
    sr: &dyn Upscaler,
) -> Result<Vec<DsSrStep>> {
    if iterations == 0 {
        return Err(Error::Config("ds_sr_iterate needs at least one iteration".into()));
    }
    let f = factor.value();
    let mut steps = Vec::with_capacity(iterations);
    let mut current = img.clone();
    for _ in 0..iterations {
        let down_w = round_dim(current.width() as f64 / f).max(1);
        let down_h = round_dim(current.height() as f64 / f).max(1);
        let lr = resize_bicubic(&current, down_w, down_h)?;
        let up_w = round_dim(down_w as f64 * f);
        let up_h = round_dim(down_h as f64 * f);
        let hr = sr.upscale(&lr, up_w, up_h)?;
        current = hr.clone();
        steps.push(DsSrStep { lr, hr });
    }
    Ok(steps)
}
