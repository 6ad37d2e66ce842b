//! Adam with a linear decay from `init_lr` to zero over the stage.

use serde::{Deserialize, Serialize};

use crate::encoder::ParamSet;
use crate::error::{Error, Result};

/// Which update rule a stage uses. Adam is the only one implemented; the
/// enum is the hook for a factored second-moment optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

pub fn linear_decay(init_lr: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    (init_lr * (1.0 - step as f64 / steps as f64)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet<f32>,
    v: ParamSet<f32>,
}

impl Adam {
    pub fn new(params: &ParamSet<f32>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update at `lr`. `step` is zero-based and drives bias
    /// correction. Non-finite gradients abort before anything is touched.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>, step: usize, lr: f64) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let t = step as i32 + 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;

        let tensors = params.tensors_mut().iter_mut();
        let state = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(grads.tensors()).zip(state) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step_size * m.data[i] / (v.data[i].sqrt() + eps);
            }
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}` after update")));
        }
        Ok(())
    }
}
