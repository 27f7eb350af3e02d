use serde::{Deserialize, Serialize};

use super::FusionError;

/// Adam moment hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn zeros(block_sizes: &[usize]) -> Self {
        Self {
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

pub fn lr_schedule(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

/// One AdamW update over parameter blocks. `decay[i]` selects whether block
/// `i` receives weight decay (weights do, biases do not).
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    decay: &[bool],
    state: &mut OptimizerState,
    opt: &AdamW,
    lr: f64,
) -> Result<(), FusionError> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(FusionError::Shape(format!("{n} parameter blocks, {} gradient blocks", grads.len())));
    }
    if !(lr > 0.0) {
        return Err(FusionError::Config(format!("learning rate must be positive, got {lr}")));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(FusionError::Shape(format!("block {i}: {} params, {} grads", p.len(), g.len())));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(FusionError::NonFiniteGradient(i));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let wd = if decay[i] { opt.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * (m_hat / (v_hat.sqrt() + opt.epsilon) + wd * *theta);
        }
    }
    Ok(())
}
