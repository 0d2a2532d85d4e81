//! Adam optimizer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err("adam_step", format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(shape_err("adam_step", format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
    {
        return Err(shape_err("adam_step", "optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}
