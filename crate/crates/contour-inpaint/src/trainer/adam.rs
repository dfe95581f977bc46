//! Adam over visitor-exposed parameters; moment buffers live inside each
//! `Param` so checkpointing sees them through the same traversal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total optimizer steps for the phase this config drives.
    pub steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 2e-4,
            batch_size: 8,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            steps: 10_000,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One Adam update on a single parameter; `t` is the 1-based step count.
pub fn adam_step(p: &mut Param<f32>, t: usize, cfg: &OptimConfig) {
    if p.adam_m.is_none() {
        p.adam_m = Some(ndarray::ArrayD::zeros(p.value.raw_dim()));
        p.adam_v = Some(ndarray::ArrayD::zeros(p.value.raw_dim()));
    }
    let m = p.adam_m.as_mut().unwrap();
    let v = p.adam_v.as_mut().unwrap();
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let lr = cfg.learning_rate as f32;
    let eps = cfg.eps as f32;
    let bc1 = 1.0 - (cfg.beta1 as f32).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2 as f32).powi(t as i32);
    ndarray::Zip::from(&mut p.value)
        .and(m)
        .and(v)
        .and(&p.grad)
        .for_each(|w, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        });
}
