//! Adam with decoupled weight decay.

use super::model::LstmModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-6 }
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, model: &LstmModel) -> Self {
        let n = model.parameter_count();
        Self { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`, parameters visited in checkpoint order.
    pub fn step(&mut self, model: &mut LstmModel, grads: &LstmModel) {
        let AdamConfig { learning_rate: lr, beta1, beta2, eps, weight_decay } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        let flat_grads = grads.flat_params();
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        model.for_each_param_mut(|_, params| {
            for (i, p) in params.iter_mut().enumerate() {
                let k = offset + i;
                let g = flat_grads[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += params.len();
        });
    }
}
