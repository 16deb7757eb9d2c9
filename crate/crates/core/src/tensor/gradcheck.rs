use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{layer_backward, layer_forward, LayerParams, LayerSpec, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;

/// A scalar function of several coordinate groups (parameter tensors and
/// optionally inputs) with an analytic gradient.
pub trait GradCheckable {
    /// `(name, len)` per coordinate group.
    fn groups(&self) -> Vec<(String, usize)>;
    fn get(&self, group: usize, index: usize) -> f64;
    fn set(&mut self, group: usize, index: usize, value: f64);
    fn loss(&self) -> f64;
    /// Analytic gradient, one vector per group.
    fn analytic(&self) -> Vec<Vec<f64>>;

    /// Loss together with a hash of the piecewise-linear regime (ReLU gates,
    /// pooling winners). Probes whose `±eps` evaluations change the hash
    /// crossed a kink and are skipped.
    fn loss_with_pattern(&self) -> (f64, u64) {
        (self.loss(), 0)
    }

    /// Coordinates excluded up front, before any evaluation.
    fn skip(&self, _group: usize, _index: usize, _eps: f64) -> bool {
        false
    }
}

/// Maximum relative error `|a−n| / max(|a|, |n|, 1e-8)` between analytic and
/// central-difference gradients over up to `per_group` probe-clean
/// coordinates of every group.
pub fn grad_check<F: GradCheckable + ?Sized>(
    f: &mut F,
    eps: f64,
    per_group: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analytic = f.analytic();
    let (_, base) = f.loss_with_pattern();
    let mut worst: f64 = 0.0;
    for (g, (_, len)) in f.groups().into_iter().enumerate() {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let mut checked = 0;
        for i in order {
            if checked == per_group {
                break;
            }
            if f.skip(g, i, eps) {
                continue;
            }
            let orig = f.get(g, i);
            f.set(g, i, orig + eps);
            let (plus, up) = f.loss_with_pattern();
            f.set(g, i, orig - eps);
            let (minus, down) = f.loss_with_pattern();
            f.set(g, i, orig);
            if up != base || down != base {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[g][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    worst
}

/// One layer under the quadratic loss `½‖layer(x) − target‖²`.
///
/// Dropout masks are drawn from a fixed seed on every evaluation so the
/// function being differentiated stays fixed.
#[derive(Clone, Debug)]
pub struct LayerFragment {
    pub spec: LayerSpec,
    pub params: Option<LayerParams>,
    pub input: Tensor4,
    pub target: Tensor4,
    pub training: bool,
}

impl LayerFragment {
    const MASK_SEED: u64 = 0x5eed;

    fn forward(&self) -> (Tensor4, super::LayerCache) {
        let mut rng = ChaCha8Rng::seed_from_u64(Self::MASK_SEED);
        layer_forward(
            &self.spec,
            self.params.as_ref(),
            &self.input,
            self.training,
            &mut rng,
        )
        .expect("fragment shapes are valid")
    }
}

impl GradCheckable for LayerFragment {
    fn groups(&self) -> Vec<(String, usize)> {
        let mut g = vec![("input".to_string(), self.input.len())];
        if let Some(p) = &self.params {
            g.push(("weight".into(), p.weight.len()));
            g.push(("bias".into(), p.bias.len()));
        }
        g
    }

    fn get(&self, group: usize, index: usize) -> f64 {
        match group {
            0 => self.input.data()[index],
            1 => self.params.as_ref().unwrap().weight[index],
            _ => self.params.as_ref().unwrap().bias[index],
        }
    }

    fn set(&mut self, group: usize, index: usize, value: f64) {
        match group {
            0 => self.input.data_mut()[index] = value,
            1 => self.params.as_mut().unwrap().weight[index] = value,
            _ => self.params.as_mut().unwrap().bias[index] = value,
        }
    }

    fn loss(&self) -> f64 {
        self.loss_with_pattern().0
    }

    fn loss_with_pattern(&self) -> (f64, u64) {
        let (out, cache) = self.forward();
        let loss = 0.5
            * out
                .data()
                .iter()
                .zip(self.target.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>();
        let mut h = DefaultHasher::new();
        cache.hash_pattern(&mut h);
        (loss, h.finish())
    }

    fn skip(&self, group: usize, index: usize, eps: f64) -> bool {
        self.spec == LayerSpec::Relu && group == 0 && self.input.data()[index].abs() <= 10.0 * eps
    }

    fn analytic(&self) -> Vec<Vec<f64>> {
        let (out, cache) = self.forward();
        let diff: Vec<f64> = out
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(o, t)| o - t)
            .collect();
        let grad_out = Tensor4::from_vec(out.shape(), diff).unwrap();
        let (gi, gp) = layer_backward(&self.spec, self.params.as_ref(), &cache, &grad_out).unwrap();
        let mut v = vec![gi.into_data()];
        if let Some(gp) = gp {
            v.push(gp.weight);
            v.push(gp.bias);
        }
        v
    }
}
