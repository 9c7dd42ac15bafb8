use crate::error::{ensure, Error, Result};
use crate::networks::Parameters;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step count for AdamW.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One AdamW update with learning rate `lr`.
///
/// Decay is decoupled: parameters flagged for decay shrink by
/// `lr * weight_decay` of their value before the moment step. Nothing is
/// modified if any gradient is non-finite.
pub fn adamw_step(params: &mut Parameters, grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    ensure!(
        grads.len() == params.len(),
        "{} gradients for {} parameters",
        grads.len(),
        params.len()
    );
    ensure!(
        state.m.len() == params.len(),
        "optimizer state belongs to another model"
    );
    for (p, g) in params.iter().zip(grads) {
        ensure!(g.shape() == p.value.shape(), "gradient shape mismatch for {}", p.path);
        if !g.is_finite() {
            return Err(Error::Divergence {
                iteration: state.step as usize,
                detail: format!("non-finite gradient for {}", p.path),
            });
        }
    }
    state.step += 1;
    let c = &state.config;
    let t = state.step as i32;
    let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let decay = if p.decay { lr * c.weight_decay } else { 0.0 };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= decay * *w;
            *w -= lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
    Ok(())
}
