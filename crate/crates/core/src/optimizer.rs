use indexmap::IndexMap;
use neft_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NeftError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T: Element> {
    cfg: AdamWConfig,
    step: u64,
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, moments: IndexMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a non-finite gradient leaves the parameters untouched.
    pub fn step(&mut self, params: &mut IndexMap<String, Tensor<T>>, grads: &IndexMap<String, Vec<T>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| NeftError::Config(format!("gradient for unknown parameter `{name}`")))?;
            if g.len() != p.numel() {
                return Err(NeftError::Dimension(format!("gradient for `{name}` has {} values, parameter has {}", g.len(), p.numel())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NeftError::NonFiniteGradient { param: name.clone(), step: self.step as usize + 1 });
            }
        }
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::cast(c.beta1), T::cast(c.beta2));
        let (one, eps) = (T::one(), T::cast(c.eps));
        let decay = T::cast(1.0 - lr * c.weight_decay);
        let step_size = T::cast(lr / bc1);
        let inv_bc2 = T::cast(1.0 / bc2);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above").data_mut();
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let denom = (v[i] * inv_bc2).sqrt() + eps;
                p[i] = p[i] * decay - step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}
