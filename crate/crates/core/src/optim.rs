//! Adam with bias correction and the amsgrad variant.
//!
//! State is keyed by parameter name, so one optimizer instance can serve a
//! whole parameter group visited in any stable order. A step is bracketed
//! by `begin_step()` (advances the shared step counter used for bias
//! correction) followed by one `update` per parameter.
//!
//! With amsgrad enabled the denominator uses the elementwise running
//! maximum of the *bias-corrected* second moment — a slight variation on
//! implementations that track the raw moment, chosen so the very first
//! step matches plain Adam exactly.

use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8, amsgrad: true }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    vhat_max: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    state: HashMap<String, Moments>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam { cfg, state: HashMap::new(), t: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Advance the bias-correction counter. Call once per optimization
    /// step, before the per-parameter updates of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply one Adam update to `p` in place. Non-trainable parameters are
    /// left untouched (their state is not created either).
    pub fn update(&mut self, p: &mut Parameter, grad: &Tensor) -> Result<()> {
        if !p.trainable {
            return Ok(());
        }
        if self.t == 0 {
            return Err(Error::invalid("optimizer update before begin_step"));
        }
        if grad.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_update",
                lhs: p.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if !grad.all_finite() {
            return Err(Error::NonFiniteGrad(p.name.clone()));
        }

        let n = p.value.numel();
        let entry = self.state.entry(p.name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            vhat_max: vec![0.0; n],
        });
        if entry.m.len() != n {
            return Err(Error::invalid(format!(
                "optimizer state for {} has {} entries but the parameter has {n}",
                p.name,
                entry.m.len()
            )));
        }

        let AdamConfig { lr, beta1, beta2, eps, amsgrad } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let values = p.value.data_mut();
        for i in 0..n {
            let gi = grad.data()[i];
            entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * gi;
            entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = entry.m[i] / bc1;
            let v_hat = entry.v[i] / bc2;
            let denom_sq = if amsgrad {
                entry.vhat_max[i] = entry.vhat_max[i].max(v_hat);
                entry.vhat_max[i]
            } else {
                v_hat
            };
            values[i] -= lr * m_hat / (denom_sq.sqrt() + eps);
        }
        Ok(())
    }
}
