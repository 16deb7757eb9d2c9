use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gemm, Tensor4};
use crate::error::{Error, Result};

/// One layer of a feed-forward stack.
///
/// Convolutions are always 3×3 with padding 1 (spatial dims preserved);
/// max pooling is always 2×2 with stride 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    Maxpool2,
    Dense { in_units: usize, out_units: usize },
    Dropout { p: f64 },
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Dense { .. })
    }

    /// Weight and bias shapes, for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => Some((vec![3, 3, in_channels, out_channels], vec![out_channels])),
            LayerSpec::Dense {
                in_units,
                out_units,
            } => Some((vec![in_units, out_units], vec![out_units])),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { in_channels, .. } => 9 * in_channels,
            LayerSpec::Dense { in_units, .. } => in_units,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            ))),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } if in_channels == 0 || out_channels == 0 => {
                Err(Error::Config("convolution with zero channels".into()))
            }
            LayerSpec::Dense {
                in_units,
                out_units,
            } if in_units == 0 || out_units == 0 => {
                Err(Error::Config("dense layer with zero units".into()))
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, or a dimension error.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, h, w, c] = input;
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                if c != in_channels {
                    return Err(Error::Dimension(format!(
                        "conv expects {in_channels} channels, got {c}"
                    )));
                }
                Ok([n, h, w, out_channels])
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input),
            LayerSpec::Maxpool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Dimension(format!(
                        "maxpool2 needs even spatial dims, got {h}x{w}"
                    )));
                }
                Ok([n, h / 2, w / 2, c])
            }
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                if h != 1 || w != 1 || c != in_units {
                    return Err(Error::Dimension(format!(
                        "dense expects 1x1x{in_units} items, got {h}x{w}x{c}"
                    )));
                }
                Ok([n, 1, 1, out_units])
            }
            LayerSpec::Flatten => Ok([n, 1, 1, h * w * c]),
        }
    }
}

/// Weights and biases of a conv or dense layer.
///
/// Conv weights are laid out `[ky][kx][in][out]`; dense weights `[in][out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros_for(spec: &LayerSpec) -> Option<Self> {
        spec.param_shapes().map(|(w, b)| Self {
            weight: vec![0.0; w.iter().product()],
            bias: vec![0.0; b.iter().product()],
        })
    }

    fn check(&self, spec: &LayerSpec) -> Result<()> {
        let (w, b) = spec
            .param_shapes()
            .ok_or_else(|| Error::State(format!("{spec:?} takes no parameters")))?;
        if self.weight.len() != w.iter().product::<usize>()
            || self.bias.len() != b.iter().product::<usize>()
        {
            return Err(Error::Dimension(format!(
                "parameter sizes ({}, {}) do not match {spec:?}",
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Zero biases and He-normal weights (variance `2 / fan_in`).
pub fn init_params<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Option<LayerParams> {
    let mut params = LayerParams::zeros_for(spec)?;
    let std = (2.0 / spec.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    for w in &mut params.weight {
        *w = normal.sample(rng);
    }
    Some(params)
}

/// Activations saved by `layer_forward` for the matching backward call.
#[derive(Clone, Debug)]
pub enum LayerCache {
    Conv { input_shape: [usize; 4], cols: Vec<f64> },
    Relu { mask: Vec<bool> },
    Maxpool2 { input_shape: [usize; 4], argmax: Vec<usize> },
    Dense { input: Tensor4 },
    Dropout { scale: Option<Vec<f64>> },
    Flatten { input_shape: [usize; 4] },
}

impl LayerCache {
    /// Feeds the non-smooth decisions of this layer (ReLU gates, pooling
    /// winners) into `hasher`; two forward passes with equal hashes took the
    /// same piecewise-linear branch.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, hasher: &mut H) {
        use std::hash::Hash;
        match self {
            LayerCache::Relu { mask } => mask.hash(hasher),
            LayerCache::Maxpool2 { argmax, .. } => argmax.hash(hasher),
            _ => {}
        }
    }
}

fn params_for<'a>(spec: &LayerSpec, params: Option<&'a LayerParams>) -> Result<&'a LayerParams> {
    let p = params.ok_or_else(|| Error::State(format!("{spec:?} requires parameters")))?;
    p.check(spec)?;
    Ok(p)
}

pub fn layer_forward<R: Rng + ?Sized>(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    input: &Tensor4,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor4, LayerCache)> {
    spec.validate()?;
    let out_shape = spec.output_shape(input.shape())?;
    match *spec {
        LayerSpec::Conv3x3 { out_channels, .. } => {
            let p = params_for(spec, params)?;
            let cols = im2col(input);
            let rows = input.n() * input.h() * input.w();
            let k = 9 * input.c();
            let mut out = Vec::with_capacity(rows * out_channels);
            for _ in 0..rows {
                out.extend_from_slice(&p.bias);
            }
            gemm(rows, k, out_channels, &cols, false, &p.weight, false, 1.0, &mut out);
            Ok((
                Tensor4::from_vec(out_shape, out)?,
                LayerCache::Conv {
                    input_shape: input.shape(),
                    cols,
                },
            ))
        }
        LayerSpec::Relu => {
            let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
            Ok((input.map(|v| v.max(0.0)), LayerCache::Relu { mask }))
        }
        LayerSpec::Maxpool2 => {
            let (out, argmax) = maxpool_forward(input, out_shape);
            Ok((
                out,
                LayerCache::Maxpool2 {
                    input_shape: input.shape(),
                    argmax,
                },
            ))
        }
        LayerSpec::Dense {
            in_units,
            out_units,
        } => {
            let p = params_for(spec, params)?;
            let n = input.n();
            let mut out = Vec::with_capacity(n * out_units);
            for _ in 0..n {
                out.extend_from_slice(&p.bias);
            }
            gemm(n, in_units, out_units, input.data(), false, &p.weight, false, 1.0, &mut out);
            Ok((
                Tensor4::from_vec(out_shape, out)?,
                LayerCache::Dense {
                    input: input.clone(),
                },
            ))
        }
        LayerSpec::Dropout { p } => {
            if !training || p == 0.0 {
                return Ok((input.clone(), LayerCache::Dropout { scale: None }));
            }
            let keep = 1.0 / (1.0 - p);
            let scale: Vec<f64> = (0..input.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = input.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
            Ok((
                Tensor4::from_vec(out_shape, data)?,
                LayerCache::Dropout { scale: Some(scale) },
            ))
        }
        LayerSpec::Flatten => Ok((
            input.clone().reshape(out_shape)?,
            LayerCache::Flatten {
                input_shape: input.shape(),
            },
        )),
    }
}

/// Returns the gradient with respect to the layer input and, for conv and
/// dense layers, the parameter gradients.
pub fn layer_backward(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    cache: &LayerCache,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Option<LayerParams>)> {
    let mismatch = || Error::State(format!("cache does not belong to {spec:?}"));
    match (spec, cache) {
        (
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            },
            LayerCache::Conv { input_shape, cols },
        ) => {
            let p = params_for(spec, params)?;
            let [n, h, w, _] = *input_shape;
            let rows = n * h * w;
            let k = 9 * in_channels;
            if grad_out.shape() != [n, h, w, *out_channels] {
                return Err(Error::Dimension(format!(
                    "conv grad {:?} vs expected {:?}",
                    grad_out.shape(),
                    [n, h, w, *out_channels]
                )));
            }
            let g = grad_out.data();
            let mut grad_w = vec![0.0; k * out_channels];
            gemm(k, rows, *out_channels, cols, true, g, false, 0.0, &mut grad_w);
            let mut grad_b = vec![0.0; *out_channels];
            for row in g.chunks_exact(*out_channels) {
                for (b, v) in grad_b.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut grad_cols = vec![0.0; rows * k];
            gemm(rows, *out_channels, k, g, false, &p.weight, true, 0.0, &mut grad_cols);
            let grad_in = col2im(&grad_cols, *input_shape);
            Ok((
                grad_in,
                Some(LayerParams {
                    weight: grad_w,
                    bias: grad_b,
                }),
            ))
        }
        (LayerSpec::Relu, LayerCache::Relu { mask }) => {
            if mask.len() != grad_out.len() {
                return Err(mismatch());
            }
            let data = grad_out
                .data()
                .iter()
                .zip(mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect();
            Ok((Tensor4::from_vec(grad_out.shape(), data)?, None))
        }
        (LayerSpec::Maxpool2, LayerCache::Maxpool2 { input_shape, argmax }) => {
            if argmax.len() != grad_out.len() {
                return Err(mismatch());
            }
            let mut grad_in = Tensor4::zeros(*input_shape);
            let gi = grad_in.data_mut();
            for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                gi[src] += g;
            }
            Ok((grad_in, None))
        }
        (
            LayerSpec::Dense {
                in_units,
                out_units,
            },
            LayerCache::Dense { input },
        ) => {
            let p = params_for(spec, params)?;
            let n = input.n();
            if grad_out.shape() != [n, 1, 1, *out_units] {
                return Err(mismatch());
            }
            let g = grad_out.data();
            let mut grad_w = vec![0.0; in_units * out_units];
            gemm(*in_units, n, *out_units, input.data(), true, g, false, 0.0, &mut grad_w);
            let mut grad_b = vec![0.0; *out_units];
            for row in g.chunks_exact(*out_units) {
                for (b, v) in grad_b.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut grad_in = vec![0.0; n * in_units];
            gemm(n, *out_units, *in_units, g, false, &p.weight, true, 0.0, &mut grad_in);
            Ok((
                Tensor4::from_vec(input.shape(), grad_in)?,
                Some(LayerParams {
                    weight: grad_w,
                    bias: grad_b,
                }),
            ))
        }
        (LayerSpec::Dropout { .. }, LayerCache::Dropout { scale }) => match scale {
            None => Ok((grad_out.clone(), None)),
            Some(scale) => {
                if scale.len() != grad_out.len() {
                    return Err(mismatch());
                }
                let data = grad_out.data().iter().zip(scale).map(|(g, s)| g * s).collect();
                Ok((Tensor4::from_vec(grad_out.shape(), data)?, None))
            }
        },
        (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => {
            Ok((grad_out.clone().reshape(*input_shape)?, None))
        }
        _ => Err(mismatch()),
    }
}

/// Rows are output pixels `(n, y, x)`; columns are `(ky, kx, ci)` taps with
/// zero padding outside the image.
fn im2col(input: &Tensor4) -> Vec<f64> {
    let [n, h, w, c] = input.shape();
    let k = 9 * c;
    let mut cols = vec![0.0; n * h * w * k];
    let data = input.data();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * k;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((b * h + sy as usize) * w + sx as usize) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&data[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], shape: [usize; 4]) -> Tensor4 {
    let [n, h, w, c] = shape;
    let k = 9 * c;
    let mut out = Tensor4::zeros(shape);
    let data = out.data_mut();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * k;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + sy as usize) * w + sx as usize) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for ch in 0..c {
                            data[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Ties resolve to the first window position in raster order.
fn maxpool_forward(input: &Tensor4, out_shape: [usize; 4]) -> (Tensor4, Vec<usize>) {
    let [n, oh, ow, c] = out_shape;
    let mut out = Tensor4::zeros(out_shape);
    let mut argmax = vec![0usize; out.len()];
    let data = input.data();
    let mut idx = 0;
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = input.offset(b, 2 * y, 2 * x, ch);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = input.offset(b, 2 * y + dy, 2 * x + dx, ch);
                        if data[o] > data[best] {
                            best = o;
                        }
                    }
                    out.data_mut()[idx] = data[best];
                    argmax[idx] = best;
                    idx += 1;
                }
            }
        }
    }
    (out, argmax)
}
