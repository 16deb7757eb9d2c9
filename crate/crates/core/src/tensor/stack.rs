use rand::Rng;

use super::{
    init_params, layer_backward, layer_forward, LayerCache, LayerParams, LayerSpec, ParamTensor,
    ParamTensorMut, Parameters, Tensor4,
};
use crate::error::{Error, Result};

/// A sequential chain of layers with their parameters.
///
/// Also used as the gradient container for itself: `backward` returns a
/// `Stack` with the same layers whose parameters hold gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Option<LayerParams>>,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        layers: Vec<LayerSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        let params = layers.iter().map(|l| init_params(l, rng)).collect();
        Ok(Self {
            name: name.into(),
            layers,
            params,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            layers: self.layers.clone(),
            params: self.layers.iter().map(LayerParams::zeros_for).collect(),
        }
    }

    pub fn output_shape(&self, mut shape: [usize; 4]) -> Result<[usize; 4]> {
        for l in &self.layers {
            shape = l.output_shape(shape)?;
        }
        Ok(shape)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor4,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor4, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (spec, params) in self.layers.iter().zip(&self.params) {
            let (y, cache) = layer_forward(spec, params.as_ref(), &x, training, rng)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Forward pass without dropout, discarding caches as it goes.
    pub fn infer(&self, input: &Tensor4) -> Result<Tensor4> {
        // dropout is inactive at inference, so the generator is never drawn
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut x = input.clone();
        for (spec, params) in self.layers.iter().zip(&self.params) {
            x = layer_forward(spec, params.as_ref(), &x, false, &mut rng)?.0;
        }
        Ok(x)
    }

    pub fn backward(&self, caches: &[LayerCache], grad_out: &Tensor4) -> Result<(Tensor4, Stack)> {
        if caches.len() != self.layers.len() {
            return Err(Error::State(format!(
                "{}: {} caches for {} layers",
                self.name,
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let (gi, gp) = layer_backward(&self.layers[i], self.params[i].as_ref(), &caches[i], &g)?;
            grads[i] = gp;
            g = gi;
        }
        Ok((
            g,
            Stack {
                name: self.name.clone(),
                layers: self.layers.clone(),
                params: grads,
            },
        ))
    }

    /// Adds `other`'s parameter values into this one (same architecture).
    pub fn accumulate(&mut self, other: &Stack) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                    *x += y;
                }
                for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                    *x += y;
                }
            }
        }
    }
}

impl Parameters for Stack {
    fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(p) = p {
                out.push(ParamTensor {
                    name: format!("{}.{i}.weight", self.name),
                    values: &p.weight,
                    penalized: true,
                });
                out.push(ParamTensor {
                    name: format!("{}.{i}.bias", self.name),
                    values: &p.bias,
                    penalized: false,
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(p) = p {
                out.push(ParamTensorMut {
                    name: format!("{}.{i}.weight", self.name),
                    values: &mut p.weight,
                    penalized: true,
                });
                out.push(ParamTensorMut {
                    name: format!("{}.{i}.bias", self.name),
                    values: &mut p.bias,
                    penalized: false,
                });
            }
        }
        out
    }
}
