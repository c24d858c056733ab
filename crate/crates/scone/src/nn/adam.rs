//! Adaptive-moment optimizer with per-parameter-group learning rates.

use std::collections::BTreeMap;

use super::Params;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state keyed by parameter name. Deterministic: the visitor order
/// is fixed by the model and the state maps are ordered.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, ..Default::default() }
    }

    /// One update step. `lr_for` maps a parameter name to its learning rate
    /// (e.g. a smaller rate for backbone parameters).
    pub fn step(&mut self, model: &mut dyn Params, lr_for: &dyn Fn(&str) -> f64) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bias1 = 1.0 - beta1.powf(t);
        let bias2 = 1.0 - beta2.powf(t);
        let m_map = &mut self.m;
        let v_map = &mut self.v;
        model.visit("", &mut |mut p| {
            let n = p.value.len();
            let m = m_map.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = v_map.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let lr = lr_for(&p.name);
            for ((value, &grad), (m_i, v_i)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = grad + weight_decay * *value;
                *m_i = beta1 * *m_i + (1.0 - beta1) * g;
                *v_i = beta2 * *v_i + (1.0 - beta2) * g * g;
                let m_hat = *m_i / bias1;
                let v_hat = *v_i / bias2;
                *value -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}
