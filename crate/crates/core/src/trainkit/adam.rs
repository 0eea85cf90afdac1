//! Bias-corrected Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
