use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// How patch-level features are collapsed into one image-level tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// (mean, max, min) stacked along the first axis.
    Joint,
    MeanOnly,
    MaxOnly,
}

impl PoolingMode {
    pub fn slices(self) -> usize {
        match self {
            PoolingMode::Joint => 3,
            PoolingMode::MeanOnly | PoolingMode::MaxOnly => 1,
        }
    }
}

/// How pooled HR and LR features are combined before the regression head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// `H − L`
    Difference,
    /// `(H, L)`
    Concat,
    /// `(H, L, H − L)`
    Both,
}

impl FusionMethod {
    pub fn multiplier(self) -> usize {
        match self {
            FusionMethod::Difference => 1,
            FusionMethod::Concat => 2,
            FusionMethod::Both => 3,
        }
    }
}

/// Image-level features; in joint mode the slices are ordered
/// (mean, max, min).
#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatures {
    pub tensor: Tensor4,
}

/// Winners of the max/min reductions, for routing gradients.
#[derive(Clone, Debug)]
pub(crate) struct PoolCache {
    n: usize,
    mode: PoolingMode,
    argmax: Vec<u32>,
    argmin: Vec<u32>,
}

impl PoolCache {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, hasher: &mut H) {
        use std::hash::Hash;
        self.argmax.hash(hasher);
        self.argmin.hash(hasher);
    }
}

pub fn pool_features(features: &Tensor4, mode: PoolingMode) -> Result<PooledFeatures> {
    pool_forward(features, mode).map(|(tensor, _)| PooledFeatures { tensor })
}

pub(crate) fn pool_forward(features: &Tensor4, mode: PoolingMode) -> Result<(Tensor4, PoolCache)> {
    let n = features.n();
    if n == 0 {
        return Err(Error::Dimension("pooling an empty feature set".into()));
    }
    let len = features.item_len();
    let mut mean = vec![0.0; len];
    let mut max = features.item(0).to_vec();
    let mut min = features.item(0).to_vec();
    let mut argmax = vec![0u32; len];
    let mut argmin = vec![0u32; len];
    for i in 0..n {
        for (j, &v) in features.item(i).iter().enumerate() {
            mean[j] += v;
            if v > max[j] {
                max[j] = v;
                argmax[j] = i as u32;
            }
            if v < min[j] {
                min[j] = v;
                argmin[j] = i as u32;
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let data = match mode {
        PoolingMode::Joint => [mean, max, min].concat(),
        PoolingMode::MeanOnly => mean,
        PoolingMode::MaxOnly => max,
    };
    let [_, h, w, c] = features.shape();
    let out = Tensor4::from_vec([mode.slices(), h, w, c], data)?;
    Ok((
        out,
        PoolCache {
            n,
            mode,
            argmax,
            argmin,
        },
    ))
}

pub(crate) fn pool_backward(cache: &PoolCache, grad: &Tensor4) -> Result<Tensor4> {
    let len = cache.argmax.len();
    if grad.len() != cache.mode.slices() * len {
        return Err(Error::State("pooling gradient does not match cache".into()));
    }
    let [_, h, w, c] = grad.shape();
    let mut out = Tensor4::zeros([cache.n, h, w, c]);
    let g = grad.data();
    let inv_n = 1.0 / cache.n as f64;
    let data = out.data_mut();
    let (g_mean, g_max, g_min) = match cache.mode {
        PoolingMode::Joint => (Some(&g[..len]), Some(&g[len..2 * len]), Some(&g[2 * len..])),
        PoolingMode::MeanOnly => (Some(g), None, None),
        PoolingMode::MaxOnly => (None, Some(g), None),
    };
    if let Some(gm) = g_mean {
        for i in 0..cache.n {
            for j in 0..len {
                data[i * len + j] += gm[j] * inv_n;
            }
        }
    }
    if let Some(gx) = g_max {
        for j in 0..len {
            data[cache.argmax[j] as usize * len + j] += gx[j];
        }
    }
    if let Some(gn) = g_min {
        for j in 0..len {
            data[cache.argmin[j] as usize * len + j] += gn[j];
        }
    }
    Ok(out)
}

pub fn fuse(hr: &PooledFeatures, lr: &PooledFeatures, method: FusionMethod) -> Result<Tensor4> {
    let (h, l) = (&hr.tensor, &lr.tensor);
    if h.shape() != l.shape() {
        return Err(Error::Dimension(format!(
            "fusing {:?} with {:?}",
            h.shape(),
            l.shape()
        )));
    }
    let diff = || {
        let data = h.data().iter().zip(l.data()).map(|(a, b)| a - b).collect();
        Tensor4::from_vec(h.shape(), data)
    };
    match method {
        FusionMethod::Difference => diff(),
        FusionMethod::Concat => Tensor4::concat(&[h, l]),
        FusionMethod::Both => Tensor4::concat(&[h, l, &diff()?]),
    }
}

/// Splits the fused gradient into `(d/dH, d/dL)`.
pub(crate) fn fuse_backward(grad: &Tensor4, method: FusionMethod) -> Result<(Tensor4, Tensor4)> {
    match method {
        FusionMethod::Difference => Ok((grad.clone(), grad.map(|v| -v))),
        FusionMethod::Concat => {
            let k = grad.n() / 2;
            let mut parts = grad.split(&[k, k])?.into_iter();
            Ok((parts.next().unwrap(), parts.next().unwrap()))
        }
        FusionMethod::Both => {
            let k = grad.n() / 3;
            let parts = grad.split(&[k, k, k])?;
            let (gh, gl, gd) = (&parts[0], &parts[1], &parts[2]);
            let dh = gh.data().iter().zip(gd.data()).map(|(a, b)| a + b).collect();
            let dl = gl.data().iter().zip(gd.data()).map(|(a, b)| a - b).collect();
            Ok((
                Tensor4::from_vec(gh.shape(), dh)?,
                Tensor4::from_vec(gl.shape(), dl)?,
            ))
        }
    }
}

/// `½‖pool(x) − target‖²`, for finite-difference checking of the pooling
/// backward pass.
#[derive(Clone, Debug)]
pub struct PoolFragment {
    pub input: Tensor4,
    pub target: Tensor4,
    pub mode: PoolingMode,
}

impl PoolFragment {
    fn eval(&self) -> (Tensor4, PoolCache) {
        pool_forward(&self.input, self.mode).expect("fragment shapes are valid")
    }

    fn diff(&self, out: &Tensor4) -> Vec<f64> {
        out.data().iter().zip(self.target.data()).map(|(a, b)| a - b).collect()
    }
}

impl crate::tensor::GradCheckable for PoolFragment {
    fn groups(&self) -> Vec<(String, usize)> {
        vec![("input".into(), self.input.len())]
    }

    fn get(&self, _: usize, index: usize) -> f64 {
        self.input.data()[index]
    }

    fn set(&mut self, _: usize, index: usize, value: f64) {
        self.input.data_mut()[index] = value;
    }

    fn loss(&self) -> f64 {
        self.loss_with_pattern().0
    }

    fn loss_with_pattern(&self) -> (f64, u64) {
        use std::hash::Hasher;
        let (out, cache) = self.eval();
        let loss = 0.5 * self.diff(&out).iter().map(|d| d * d).sum::<f64>();
        let mut h = std::collections::hash_map::DefaultHasher::new();
        cache.hash_pattern(&mut h);
        (loss, h.finish())
    }

    fn analytic(&self) -> Vec<Vec<f64>> {
        let (out, cache) = self.eval();
        let g = Tensor4::from_vec(out.shape(), self.diff(&out)).expect("same shape");
        vec![pool_backward(&cache, &g).expect("cache matches").into_data()]
    }
}
