use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use crate::layers::ParamStore;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub config: OptimizerConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: OptimizerConfig) -> Self {
        let zeros = || params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update; `grads[i]` is the gradient of parameter `i` (absent
    /// means zero). Returns the global gradient norm before clipping.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> f64 {
        let c = &self.config;
        let norm = grads.iter().flatten().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt();
        let scale = match c.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = grads.get(i).and_then(|g| g.as_ref());
            for k in 0..p.len() {
                let gk = grad.map_or(0.0, |g| g.data()[k] * scale);
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p[k]);
            }
        }
        norm
    }
}
