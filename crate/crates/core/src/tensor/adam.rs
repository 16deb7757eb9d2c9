use crate::error::{Error, Result};

pub struct ParamTensor<'a> {
    pub name: String,
    pub values: &'a [f64],
    /// Whether the tensor takes part in the L2 penalty (weights, not biases).
    pub penalized: bool,
}

pub struct ParamTensorMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub penalized: bool,
}

/// An ordered, named collection of parameter tensors.
///
/// Gradients are represented by a value of the same type, so ordering and
/// shapes line up by construction.
pub trait Parameters {
    fn tensors(&self) -> Vec<ParamTensor<'_>>;
    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>>;
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<ParamTensor<'_>> {
        vec![ParamTensor {
            name: "param".into(),
            values: self,
            penalized: true,
        }]
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>> {
        vec![ParamTensorMut {
            name: "param".into(),
            values: self,
            penalized: true,
        }]
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new<P: Parameters + ?Sized>(eta: f64, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.values.len()])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            eta,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
        }
    }

    pub fn apply<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.values.len() != g.values.len() || p.values.len() != m.len() {
                return Err(Error::Dimension(format!(
                    "{}: {} values vs {} gradients",
                    p.name,
                    p.values.len(),
                    g.values.len()
                )));
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: g.name.clone(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..m.len() {
                let gi = g.values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.eta * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
