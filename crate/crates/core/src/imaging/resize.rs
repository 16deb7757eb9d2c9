use super::ImageRGB;
use crate::error::{Error, Result};

/// Cubic convolution parameter used by `resize_bicubic`.
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with parameter `a`.
#[inline]
pub fn cubic_weight(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Grid the horizontal pass is snapped to. Tap weights only sum to one up to
/// the last bit; snapping keeps a constant row exactly constant so the
/// vertical pass rounds every column the same way.
const SNAP: f64 = (1u64 << 24) as f64;

struct Taps {
    index: Vec<[usize; 4]>,
    weight: Vec<[f64; 4]>,
}

fn taps(len_in: usize, len_out: usize, a: f64) -> Taps {
    let scale = len_in as f64 / len_out as f64;
    let last = len_in as isize - 1;
    let mut index = Vec::with_capacity(len_out);
    let mut weight = Vec::with_capacity(len_out);
    for o in 0..len_out {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        let t = src - base;
        let base = base as isize;
        let mut idx = [0usize; 4];
        let mut w = [0.0; 4];
        for k in 0..4 {
            let off = k as isize - 1;
            idx[k] = (base + off).clamp(0, last) as usize;
            w[k] = cubic_weight(t - off as f64, a);
        }
        index.push(idx);
        weight.push(w);
    }
    Taps { index, weight }
}

/// Separable cubic convolution with `a = -0.5` and edge clamping.
pub fn resize_bicubic(img: &ImageRGB, out_w: usize, out_h: usize) -> Result<ImageRGB> {
    resize_cubic(img, out_w, out_h, CUBIC_A)
}

/// Separable cubic resampling with kernel parameter `a`.
///
/// Output pixel `x` samples source coordinate `(x + 0.5)·w_in/w_out − 0.5`;
/// out-of-range taps clamp to the border. The horizontal pass is kept in
/// floating point (snapped to a 2^-24 grid) and only the final values are
/// rounded to 8 bits.
pub fn resize_cubic(img: &ImageRGB, out_w: usize, out_h: usize, a: f64) -> Result<ImageRGB> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Dimension(format!(
            "resize to zero dimension {out_w}x{out_h}"
        )));
    }
    let (w_in, h_in) = img.dims();
    let px = img.pixels();
    let hx = taps(w_in, out_w, a);
    let vy = taps(h_in, out_h, a);

    let mut tmp = vec![0.0f64; h_in * out_w * 3];
    for y in 0..h_in {
        let row = &px[y * w_in * 3..(y + 1) * w_in * 3];
        for x in 0..out_w {
            let (idx, w) = (&hx.index[x], &hx.weight[x]);
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * row[idx[k] * 3 + c] as f64;
                }
                tmp[(y * out_w + x) * 3 + c] = (acc * SNAP).round() / SNAP;
            }
        }
    }

    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for y in 0..out_h {
        let (idx, w) = (&vy.index[y], &vy.weight[y]);
        for x in 0..out_w {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * tmp[(idx[k] * out_w + x) * 3 + c];
                }
                out.push(acc.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageRGB::new(out_w, out_h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic_weight(0.0, CUBIC_A), 1.0);
        assert_eq!(cubic_weight(1.0, CUBIC_A), 0.0);
        assert_eq!(cubic_weight(2.0, CUBIC_A), 0.0);
        assert!((cubic_weight(0.5, CUBIC_A) - 0.5625).abs() < 1e-15);
        assert!((cubic_weight(1.5, CUBIC_A) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = ImageRGB::filled(13, 9, [119, 119, 119]);
        for (w, h) in [(1, 1), (5, 3), (26, 18), (37, 7)] {
            let out = resize_bicubic(&img, w, h).unwrap();
            assert!(out.pixels().iter().all(|&v| v == 119), "{w}x{h}");
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = ImageRGB::from_fn(11, 6, |x, y| [(x * 23) as u8, (y * 41) as u8, (x ^ y) as u8]);
        assert_eq!(resize_bicubic(&img, 11, 6).unwrap(), img);
    }

    #[test]
    fn zero_dimension() {
        let img = ImageRGB::filled(4, 4, [0; 3]);
        assert!(resize_bicubic(&img, 0, 4).is_err());
    }
}
