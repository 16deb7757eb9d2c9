//! Built-in numeric checks: finite-difference gradients of every layer and
//! of the whole network, plus loop-oracle comparisons for the fast kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::imaging::ImageRGB;
use crate::metrics::{krcc, krcc_fast, plcc, srcc};
use crate::model::{build_model, ModelConfig, ModelFragment, PatchInput, PoolFragment, PoolingMode};
use crate::tensor::{
    grad_check, init_params, layer_forward, LayerFragment, LayerSpec, Tensor4, DEFAULT_EPS,
};

/// Maximum accepted relative error of a gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Maximum accepted absolute deviation from a loop oracle.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value < threshold && value.is_finite(),
            value,
            threshold,
        }
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor4::from_vec(shape, data).expect("shape matches data")
}

fn fragment(spec: LayerSpec, input: [usize; 4], training: bool, rng: &mut ChaCha8Rng) -> LayerFragment {
    let params = init_params(&spec, rng);
    let out = spec.output_shape(input).expect("valid fragment");
    LayerFragment {
        input: normal_tensor(rng, input),
        target: normal_tensor(rng, out),
        spec,
        params,
        training,
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageRGB {
    ImageRGB::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Per-layer checks followed by one check of the full objective (MSE plus
/// L2 penalty, dropout active) for `config`.
pub fn gradient_suite(config: &ModelConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<(&str, LayerSpec, [usize; 4], bool)> = vec![
        (
            "conv3x3",
            LayerSpec::Conv3x3 {
                in_channels: 3,
                out_channels: 4,
            },
            [2, 6, 5, 3],
            false,
        ),
        ("relu", LayerSpec::Relu, [2, 4, 4, 3], false),
        ("maxpool2", LayerSpec::Maxpool2, [2, 6, 4, 3], false),
        (
            "dense",
            LayerSpec::Dense {
                in_units: 12,
                out_units: 5,
            },
            [3, 1, 1, 12],
            false,
        ),
        ("dropout", LayerSpec::Dropout { p: 0.5 }, [2, 3, 3, 4], true),
        ("flatten", LayerSpec::Flatten, [2, 3, 2, 4], false),
    ];
    let mut out = Vec::new();
    for (name, spec, shape, training) in layers {
        let mut f = fragment(spec, shape, training, &mut rng);
        let err = grad_check(&mut f, DEFAULT_EPS, usize::MAX, seed);
        out.push(CheckResult::below(format!("layer {name}"), err, GRAD_TOLERANCE));
    }

    let mut pf = PoolFragment {
        input: normal_tensor(&mut rng, [3, 2, 2, 2]),
        target: normal_tensor(&mut rng, [3, 2, 2, 2]),
        mode: PoolingMode::Joint,
    };
    let err = grad_check(&mut pf, DEFAULT_EPS, usize::MAX, seed);
    out.push(CheckResult::below("joint pooling", err, GRAD_TOLERANCE));

    let params = build_model(config, seed)?;
    let hr = random_image(&mut rng, crate::model::HR_PATCH, crate::model::HR_PATCH);
    let lr = random_image(&mut rng, crate::model::LR_PATCH * 2, crate::model::LR_PATCH * 2);
    let input = PatchInput::from_images(&hr, config.use_lr_reference.then_some(&lr))?;
    let mut mf = ModelFragment {
        params,
        inputs: vec![input],
        targets: vec![rng.random_range(0.0..1.0)],
        lambda: 5e-4,
        mask_seeds: vec![rng.random()],
    };
    let err = grad_check(&mut mf, DEFAULT_EPS, 50, seed);
    out.push(CheckResult::below(
        format!("model width {}", config.width_c),
        err,
        GRAD_TOLERANCE,
    ));
    Ok(out)
}

fn conv_loop(input: &Tensor4, weight: &[f64], bias: &[f64], co: usize) -> Vec<f64> {
    let [n, h, w, ci] = input.shape();
    let mut out = vec![0.0; n * h * w * co];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for o in 0..co {
                    let mut s = bias[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                s += weight[((ky * 3 + kx) * ci + c) * co + o]
                                    * input.at(b, yy as usize, xx as usize, c);
                            }
                        }
                    }
                    out[((b * h + y) * w + x) * co + o] = s;
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Fast convolution, pooling and rank statistics against straightforward
/// loop implementations.
pub fn oracle_suite(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv_err: f64 = 0.0;
    let mut pool_err: f64 = 0.0;
    for _ in 0..cases {
        let (n, h, w) = (rng.random_range(1..3), rng.random_range(1..7) * 2, rng.random_range(1..7) * 2);
        let (ci, co) = (rng.random_range(1..5), rng.random_range(1..5));
        let spec = LayerSpec::Conv3x3 {
            in_channels: ci,
            out_channels: co,
        };
        let mut p = init_params(&spec, &mut rng).expect("conv has params");
        p.bias.iter_mut().for_each(|b| *b = StandardNormal.sample(&mut rng));
        let x = normal_tensor(&mut rng, [n, h, w, ci]);
        let (y, _) = layer_forward(&spec, Some(&p), &x, false, &mut rng)?;
        conv_err = conv_err.max(max_abs_diff(y.data(), &conv_loop(&x, &p.weight, &p.bias, co)));

        let (y, _) = layer_forward(&LayerSpec::Maxpool2, None, &x, false, &mut rng)?;
        let mut want = Vec::with_capacity(y.len());
        for b in 0..n {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    for c in 0..ci {
                        let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .map(|(dy, dx)| x.at(b, 2 * oy + dy, 2 * ox + dx, c))
                            .fold(f64::NEG_INFINITY, f64::max);
                        want.push(m);
                    }
                }
            }
        }
        pool_err = pool_err.max(max_abs_diff(y.data(), &want));
    }

    let mut corr_err: f64 = 0.0;
    for _ in 0..cases {
        let len = rng.random_range(3..=50);
        let levels = rng.random_range(2..10);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64).collect();
        let (Ok(a), Ok(b)) = (krcc(&x, &y), krcc_fast(&x, &y)) else {
            continue;
        };
        corr_err = corr_err.max((a - b).abs());
        let (Ok(s), Ok(p)) = (srcc(&x, &y), plcc(&x, &y)) else {
            continue;
        };
        if !s.is_finite() || !p.is_finite() {
            corr_err = f64::INFINITY;
        }
    }
    Ok(vec![
        CheckResult::below("conv3x3 vs loop", conv_err, ORACLE_TOLERANCE),
        CheckResult::below("maxpool2 vs loop", pool_err, ORACLE_TOLERANCE),
        CheckResult::below("kendall fast vs pairwise", corr_err, ORACLE_TOLERANCE),
    ])
}

/// Everything `sriqa selftest` reports: oracles plus a narrow-model
/// gradient suite.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = oracle_suite(seed, 100)?;
    let config = ModelConfig {
        width_c: 8,
        head_units: vec![32, 16, 8, 1],
        ..ModelConfig::default()
    };
    out.extend(gradient_suite(&config, seed)?);
    Ok(out)
}
