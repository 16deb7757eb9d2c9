//! The two-stream reduced-reference quality network.
//!
//! LR patches (32×32) and HR patches (128×128) run through separate
//! convolutional extractors that both end at 8×8×`width_c`. Patch features
//! are pooled per image, fused, flattened and regressed to a scalar score by
//! a fully connected head.

mod objective;
mod pooling;
mod weights;

pub use objective::{batch_loss, batch_loss_and_gradient, BatchEval, ModelFragment};
pub use pooling::{fuse, pool_features, FusionMethod, PoolFragment, PoolingMode, PooledFeatures};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC};

use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{extract_patches, ImageRGB};
use crate::tensor::{LayerCache, LayerSpec, ParamTensor, ParamTensorMut, Parameters, Stack, Tensor4};
use pooling::{fuse_backward, pool_backward, pool_forward, PoolCache};

pub const LR_PATCH: usize = 32;
pub const HR_PATCH: usize = 128;
/// Spatial extent of every stream's output feature map.
pub const FEATURE_SIDE: usize = 8;

/// Inference is run over at most this many patches at once.
const INFER_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width_c: usize,
    pub fusion_method: FusionMethod,
    pub pooling_mode: PoolingMode,
    pub use_lr_reference: bool,
    pub head_units: Vec<usize>,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    /// Desk-scale network: 32 output channels and a 256/128/64/1 head.
    fn default() -> Self {
        Self {
            width_c: 32,
            fusion_method: FusionMethod::Difference,
            pooling_mode: PoolingMode::Joint,
            use_lr_reference: true,
            head_units: vec![256, 128, 64, 1],
            dropout_p: 0.5,
        }
    }
}

impl ModelConfig {
    /// Full-size network: 512 output channels and a 2048/1024/256/1 head.
    pub fn full_width() -> Self {
        Self {
            width_c: 512,
            head_units: vec![2048, 1024, 256, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_c == 0 || self.width_c % 8 != 0 {
            return Err(Error::Config(format!(
                "width_c must be a positive multiple of 8, got {}",
                self.width_c
            )));
        }
        if self.head_units.last() != Some(&1) || self.head_units.contains(&0) {
            return Err(Error::Config(format!(
                "head must end in exactly one unit: {:?}",
                self.head_units
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Shape of the tensor entering the head, before flattening.
    pub fn fused_shape(&self) -> [usize; 4] {
        let slices = self.pooling_mode.slices();
        let n = if self.use_lr_reference {
            slices * self.fusion_method.multiplier()
        } else {
            slices
        };
        [n, FEATURE_SIDE, FEATURE_SIDE, self.width_c]
    }

    pub fn head_input_len(&self) -> usize {
        self.fused_shape().iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Lr,
    Hr,
}

impl Stream {
    pub fn patch_size(self) -> usize {
        match self {
            Stream::Lr => LR_PATCH,
            Stream::Hr => HR_PATCH,
        }
    }
}

fn conv(i: usize, o: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Conv3x3 {
            in_channels: i,
            out_channels: o,
        },
        LayerSpec::Relu,
    ]
}

/// Layer list of one feature extractor.
///
/// Channel ladder `c/8, c/4, c/2, c`; the LR stream pools twice (32 → 8),
/// the HR stream four times (128 → 8).
pub fn stream_layers(width_c: usize, stream: Stream) -> Vec<LayerSpec> {
    let (c1, c2, c3, c4) = (width_c / 8, width_c / 4, width_c / 2, width_c);
    let mut l = Vec::new();
    match stream {
        Stream::Lr => {
            l.extend(conv(3, c1));
            l.extend(conv(c1, c1));
            l.push(LayerSpec::Maxpool2);
            l.extend(conv(c1, c2));
            l.extend(conv(c2, c2));
            l.push(LayerSpec::Maxpool2);
            l.extend(conv(c2, c3));
            l.extend(conv(c3, c4));
        }
        Stream::Hr => {
            let stages = [(3, c1), (c1, c2), (c2, c3), (c3, c4)];
            for (i, o) in stages {
                l.extend(conv(i, o));
                l.extend(conv(o, o));
                l.push(LayerSpec::Maxpool2);
            }
        }
    }
    l
}

pub fn head_layers(config: &ModelConfig) -> Vec<LayerSpec> {
    let mut l = vec![LayerSpec::Flatten];
    let mut prev = config.head_input_len();
    let last = config.head_units.len() - 1;
    for (i, &units) in config.head_units.iter().enumerate() {
        l.push(LayerSpec::Dense {
            in_units: prev,
            out_units: units,
        });
        if i < last {
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dropout {
                p: config.dropout_p,
            });
        }
        prev = units;
    }
    l
}

/// Builds one feature extractor with freshly initialized weights.
pub fn build_stream(width_c: usize, stream: Stream, seed: u64) -> Result<Stack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = match stream {
        Stream::Lr => "lr",
        Stream::Hr => "hr",
    };
    Stack::new(name, stream_layers(width_c, stream), &mut rng)
}

/// Weights of the whole network. Doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// LR extractor; has no layers when the model runs without reference.
    pub theta_lr: Stack,
    pub theta_hr: Stack,
    pub head: Stack,
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr_layers = if config.use_lr_reference {
        stream_layers(config.width_c, Stream::Lr)
    } else {
        Vec::new()
    };
    Ok(ModelParams {
        config: config.clone(),
        theta_lr: Stack::new("lr", lr_layers, &mut rng)?,
        theta_hr: Stack::new("hr", stream_layers(config.width_c, Stream::Hr), &mut rng)?,
        head: Stack::new("head", head_layers(config), &mut rng)?,
    })
}

/// A model with every parameter set to zero; used as a loading template.
pub fn zero_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let stack = |name: &str, layers: Vec<LayerSpec>| {
        Stack {
            name: name.into(),
            layers,
            params: Vec::new(),
        }
        .zeros_like()
    };
    let lr_layers = if config.use_lr_reference {
        stream_layers(config.width_c, Stream::Lr)
    } else {
        Vec::new()
    };
    Ok(ModelParams {
        config: config.clone(),
        theta_lr: stack("lr", lr_layers),
        theta_hr: stack("hr", stream_layers(config.width_c, Stream::Hr)),
        head: stack("head", head_layers(config)),
    })
}

/// Patches of one image pair, ready for the network.
#[derive(Clone, Debug)]
pub struct PatchInput {
    pub hr: Tensor4,
    pub lr: Option<Tensor4>,
}

impl PatchInput {
    pub fn from_images(hr: &ImageRGB, lr: Option<&ImageRGB>) -> Result<Self> {
        Ok(Self {
            hr: extract_patches(hr, HR_PATCH)?,
            lr: lr.map(|l| extract_patches(l, LR_PATCH)).transpose()?,
        })
    }
}

/// Everything saved by a training-mode forward pass of one image.
pub struct ForwardCache {
    hr: Vec<LayerCache>,
    lr: Option<Vec<LayerCache>>,
    pool_hr: PoolCache,
    pool_lr: Option<PoolCache>,
    head: Vec<LayerCache>,
}

impl ForwardCache {
    /// Hash of every ReLU gate and pooling winner in the pass.
    pub fn pattern(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for c in self
            .hr
            .iter()
            .chain(self.lr.iter().flatten())
            .chain(&self.head)
        {
            c.hash_pattern(&mut h);
        }
        self.pool_hr.hash_pattern(&mut h);
        if let Some(p) = &self.pool_lr {
            p.hash_pattern(&mut h);
        }
        h.finish()
    }
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            theta_lr: self.theta_lr.zeros_like(),
            theta_hr: self.theta_hr.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Name and shape of every parameter tensor, in `Parameters` order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for stack in [&self.theta_lr, &self.theta_hr, &self.head] {
            for (i, l) in stack.layers.iter().enumerate() {
                if let Some((w, b)) = l.param_shapes() {
                    out.push((format!("{}.{i}.weight", stack.name), w));
                    out.push((format!("{}.{i}.bias", stack.name), b));
                }
            }
        }
        out
    }

    pub fn accumulate(&mut self, other: &ModelParams) {
        self.theta_lr.accumulate(&other.theta_lr);
        self.theta_hr.accumulate(&other.theta_hr);
        self.head.accumulate(&other.head);
    }

    pub fn stream(&self, stream: Stream) -> &Stack {
        match stream {
            Stream::Lr => &self.theta_lr,
            Stream::Hr => &self.theta_hr,
        }
    }

    fn check_patches(&self, patches: &Tensor4, stream: Stream) -> Result<()> {
        let s = stream.patch_size();
        if patches.h() != s || patches.w() != s || patches.c() != 3 {
            return Err(Error::Dimension(format!(
                "{stream:?} stream takes {s}x{s}x3 patches, got {:?}",
                patches.shape()
            )));
        }
        if stream == Stream::Lr && !self.config.use_lr_reference {
            return Err(Error::Config("model was built without the LR stream".into()));
        }
        Ok(())
    }

    fn lr_required(&self) -> Error {
        Error::Config(
            "this reduced-reference model needs the LR reference image (--lr); \
             only no-reference models predict from the HR image alone"
                .into(),
        )
    }

    /// Training-mode forward pass of one image; returns the score and cache.
    pub fn forward_image<R: Rng + ?Sized>(
        &self,
        input: &PatchInput,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, ForwardCache)> {
        self.check_patches(&input.hr, Stream::Hr)?;
        let (f_hr, hr_cache) = self.theta_hr.forward(&input.hr, training, rng)?;
        let (p_hr, pool_hr) = pool_forward(&f_hr, self.config.pooling_mode)?;

        let (fused, lr_cache, pool_lr) = if self.config.use_lr_reference {
            let lr = input.lr.as_ref().ok_or_else(|| self.lr_required())?;
            self.check_patches(lr, Stream::Lr)?;
            let (f_lr, lr_cache) = self.theta_lr.forward(lr, training, rng)?;
            let (p_lr, pool_lr) = pool_forward(&f_lr, self.config.pooling_mode)?;
            let fused = fuse(
                &PooledFeatures { tensor: p_hr },
                &PooledFeatures { tensor: p_lr },
                self.config.fusion_method,
            )?;
            (fused, Some(lr_cache), Some(pool_lr))
        } else {
            (p_hr, None, None)
        };

        let flat = fused.reshape([1, 1, 1, self.config.head_input_len()])?;
        let (out, head_cache) = self.head.forward(&flat, training, rng)?;
        Ok((
            out.data()[0],
            ForwardCache {
                hr: hr_cache,
                lr: lr_cache,
                pool_hr,
                pool_lr,
                head: head_cache,
            },
        ))
    }

    /// Gradient of `d_pred · score` with respect to every parameter.
    pub fn backward_image(&self, cache: &ForwardCache, d_pred: f64) -> Result<ModelParams> {
        let (g_flat, g_head) = self.head.backward(&cache.head, &Tensor4::vector(vec![d_pred]))?;
        let g_fused = g_flat.reshape(self.config.fused_shape())?;

        let mut grads = self.zeros_like();
        grads.head = g_head;

        let g_phr = if self.config.use_lr_reference {
            let (g_phr, g_plr) = fuse_backward(&g_fused, self.config.fusion_method)?;
            let pool_lr = cache
                .pool_lr
                .as_ref()
                .ok_or_else(|| Error::State("missing LR pooling cache".into()))?;
            let lr_cache = cache
                .lr
                .as_ref()
                .ok_or_else(|| Error::State("missing LR stream cache".into()))?;
            let g_flr = pool_backward(pool_lr, &g_plr)?;
            grads.theta_lr = self.theta_lr.backward(lr_cache, &g_flr)?.1;
            g_phr
        } else {
            g_fused
        };
        let g_fhr = pool_backward(&cache.pool_hr, &g_phr)?;
        grads.theta_hr = self.theta_hr.backward(&cache.hr, &g_fhr)?.1;
        Ok(grads)
    }

    /// Deterministic score of a prepared patch set (dropout off).
    pub fn predict_patches(&self, input: &PatchInput) -> Result<f64> {
        let f_hr = self.extract_features(&input.hr, Stream::Hr)?;
        let p_hr = pool_features(&f_hr, self.config.pooling_mode)?;
        let fused = if self.config.use_lr_reference {
            let lr = input.lr.as_ref().ok_or_else(|| self.lr_required())?;
            let f_lr = self.extract_features(lr, Stream::Lr)?;
            let p_lr = pool_features(&f_lr, self.config.pooling_mode)?;
            fuse(&p_hr, &p_lr, self.config.fusion_method)?
        } else {
            p_hr.tensor
        };
        let flat = fused.reshape([1, 1, 1, self.config.head_input_len()])?;
        Ok(self.head.infer(&flat)?.data()[0])
    }

    /// Per-patch feature maps `(N, 8, 8, width_c)` in inference mode.
    pub fn extract_features(&self, patches: &Tensor4, stream: Stream) -> Result<Tensor4> {
        self.check_patches(patches, stream)?;
        let stack = self.stream(stream);
        let n = patches.n();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + INFER_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            parts.push(stack.infer(&patches.select(&idx)?)?);
            start = end;
        }
        if parts.is_empty() {
            return Ok(Tensor4::zeros([0, FEATURE_SIDE, FEATURE_SIDE, self.config.width_c]));
        }
        Tensor4::concat(&parts.iter().collect::<Vec<_>>())
    }

    pub fn pooled(&self, img: &ImageRGB, stream: Stream) -> Result<PooledFeatures> {
        let patches = extract_patches(img, stream.patch_size())?;
        pool_features(&self.extract_features(&patches, stream)?, self.config.pooling_mode)
    }
}

/// Quality score of an HR image given its LR reference.
///
/// No-reference models ignore `lr`; reduced-reference models require it.
pub fn predict(params: &ModelParams, hr: &ImageRGB, lr: Option<&ImageRGB>) -> Result<f64> {
    let lr = if params.config.use_lr_reference {
        Some(lr.ok_or_else(|| params.lr_required())?)
    } else {
        None
    };
    params.predict_patches(&PatchInput::from_images(hr, lr)?)
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut v = self.theta_lr.tensors();
        v.extend(self.theta_hr.tensors());
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>> {
        let mut v = self.theta_lr.tensors_mut();
        v.extend(self.theta_hr.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}
