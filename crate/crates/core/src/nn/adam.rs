use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.m[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.v[param]
    }

    /// Applies one update from the gradients currently stored in `params`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if let Some(p) = params
            .iter()
            .find(|p| p.tensor.grad().iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (tensor, frozen) = p.split_mut();
            let (values, grads) = tensor.parts_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                if frozen.get(i).copied().unwrap_or(false) {
                    continue;
                }
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
