use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpParams};
use crate::error::{Error, Result};

/// Adam hyper-parameters. Betas and epsilon default to the usual (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl MlpParams {
    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any state.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.weights.len() != self.weights.len()
            || grads.weights.iter().zip(&self.weights).any(|(g, w)| g.dim() != w.dim())
            || grads.biases.iter().zip(&self.biases).any(|(g, b)| g.dim() != b.dim())
        {
            return Err(Error::Dimension("gradient shapes do not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", cfg.lr)));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for l in 0..self.weights.len() {
            Zip::from(&mut self.weights[l])
                .and(&mut self.adam_m.weights[l])
                .and(&mut self.adam_v.weights[l])
                .and(&grads.weights[l])
                .for_each(update);
            Zip::from(&mut self.biases[l])
                .and(&mut self.adam_m.biases[l])
                .and(&mut self.adam_v.biases[l])
                .and(&grads.biases[l])
                .for_each(update);
        }
        Ok(())
    }
}
