use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ForwardCache, ModelParams, PatchInput};
use crate::error::{Error, Result};
use crate::tensor::{loss_mse_l2, GradCheckable, Parameters};

/// Result of one training-mode pass over a batch.
pub struct BatchEval {
    pub loss: f64,
    pub predictions: Vec<f64>,
    /// Gradient of `loss` with respect to every parameter, penalty included.
    pub gradient: ModelParams,
    /// Combined activation-pattern hash of every image in the batch.
    pub pattern: u64,
}

/// Mean squared error plus `lambda · ‖W‖²` over `inputs`, with image `i`'s
/// dropout masks drawn from `mask_seeds[i]`.
///
/// Images are processed in parallel but gradients are summed in index order,
/// so the result does not depend on the worker count.
pub fn batch_loss_and_gradient(
    params: &ModelParams,
    inputs: &[&PatchInput],
    targets: &[f64],
    lambda: f64,
    mask_seeds: &[u64],
) -> Result<BatchEval> {
    let passes = forward_batch(params, inputs, targets, mask_seeds)?;
    let predictions: Vec<f64> = passes.iter().map(|(p, _)| *p).collect();
    let lv = loss_mse_l2(&predictions, targets, penalized(params), lambda)?;

    let per_image: Vec<ModelParams> = passes
        .par_iter()
        .zip(lv.grad_pred.par_iter())
        .map(|((_, cache), &g)| params.backward_image(cache, g))
        .collect::<Result<_>>()?;

    let mut gradient = params.zeros_like();
    for g in &per_image {
        gradient.accumulate(g);
    }
    if lambda > 0.0 {
        for (g, p) in gradient.tensors_mut().into_iter().zip(params.tensors()) {
            if p.penalized {
                for (gv, pv) in g.values.iter_mut().zip(p.values) {
                    *gv += 2.0 * lambda * pv;
                }
            }
        }
    }

    Ok(BatchEval {
        loss: lv.loss,
        predictions,
        gradient,
        pattern: pattern_hash(&passes),
    })
}

/// The loss and pattern hash of [`batch_loss_and_gradient`] without the
/// backward pass.
pub fn batch_loss(
    params: &ModelParams,
    inputs: &[&PatchInput],
    targets: &[f64],
    lambda: f64,
    mask_seeds: &[u64],
) -> Result<(f64, u64)> {
    let passes = forward_batch(params, inputs, targets, mask_seeds)?;
    let predictions: Vec<f64> = passes.iter().map(|(p, _)| *p).collect();
    let lv = loss_mse_l2(&predictions, targets, penalized(params), lambda)?;
    Ok((lv.loss, pattern_hash(&passes)))
}

fn forward_batch(
    params: &ModelParams,
    inputs: &[&PatchInput],
    targets: &[f64],
    mask_seeds: &[u64],
) -> Result<Vec<(f64, ForwardCache)>> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if inputs.len() != targets.len() || inputs.len() != mask_seeds.len() {
        return Err(Error::Dimension(format!(
            "{} inputs, {} targets, {} seeds",
            inputs.len(),
            targets.len(),
            mask_seeds.len()
        )));
    }
    inputs
        .par_iter()
        .zip(mask_seeds.par_iter())
        .map(|(input, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            params.forward_image(input, true, &mut rng)
        })
        .collect()
}

fn penalized(params: &ModelParams) -> Vec<&[f64]> {
    params
        .tensors()
        .into_iter()
        .filter(|t| t.penalized)
        .map(|t| t.values)
        .collect()
}

fn pattern_hash(passes: &[(f64, ForwardCache)]) -> u64 {
    let mut h = DefaultHasher::new();
    for (_, cache) in passes {
        h.write_u64(cache.pattern());
    }
    h.finish()
}

/// The full training objective as a function of the model parameters, for
/// finite-difference checking.
pub struct ModelFragment {
    pub params: ModelParams,
    pub inputs: Vec<PatchInput>,
    pub targets: Vec<f64>,
    pub lambda: f64,
    pub mask_seeds: Vec<u64>,
}

impl ModelFragment {
    fn eval(&self) -> BatchEval {
        let inputs: Vec<&PatchInput> = self.inputs.iter().collect();
        batch_loss_and_gradient(&self.params, &inputs, &self.targets, self.lambda, &self.mask_seeds)
            .expect("fragment inputs are valid")
    }
}

impl GradCheckable for ModelFragment {
    fn groups(&self) -> Vec<(String, usize)> {
        self.params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.values.len()))
            .collect()
    }

    fn get(&self, group: usize, index: usize) -> f64 {
        self.params.tensors()[group].values[index]
    }

    fn set(&mut self, group: usize, index: usize, value: f64) {
        self.params.tensors_mut()[group].values[index] = value;
    }

    fn loss(&self) -> f64 {
        self.loss_with_pattern().0
    }

    fn loss_with_pattern(&self) -> (f64, u64) {
        let inputs: Vec<&PatchInput> = self.inputs.iter().collect();
        batch_loss(&self.params, &inputs, &self.targets, self.lambda, &self.mask_seeds)
            .expect("fragment inputs are valid")
    }

    fn analytic(&self) -> Vec<Vec<f64>> {
        self.eval()
            .gradient
            .tensors()
            .into_iter()
            .map(|t| t.values.to_vec())
            .collect()
    }
}
