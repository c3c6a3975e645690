use super::{Gradients, Module};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Moments mirror the module's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new<M: Module + ?Sized>(module: &M, config: AdamWConfig) -> Self {
        let sizes: Vec<usize> = module.params().iter().map(|p| p.len()).collect();
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            decay: module.param_specs().iter().map(|s| s.decay).collect(),
        }
    }

    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.0.len() != self.first.len() || grads.0.iter().zip(&self.first).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::Shape("gradient layout differs from optimizer state".into()));
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, param) in module.params_mut().into_iter().enumerate() {
            let decay = if self.decay[i] { lr * weight_decay } else { 0.0 };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, p) in param.iter_mut().enumerate() {
                let g = grads.0[i][j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= decay * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
