use serde::{Deserialize, Serialize};

use super::{ParamTape, Tensor2};
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `params`, then zeroes them.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamTape) -> Result<()> {
        for id in params.ids() {
            if !params.grad(id).is_finite() {
                return Err(Error::NonFiniteGradient(params.name(id).to_owned()));
            }
        }
        if self.first.len() != params.len() {
            if self.step != 0 {
                return Err(Error::InvalidArgument(format!(
                    "optimizer tracks {} parameters, tape has {}",
                    self.first.len(),
                    params.len()
                )));
            }
            self.first = params
                .ids()
                .map(|id| Tensor2::zeros(params.value(id).rows(), params.value(id).cols()))
                .collect();
            self.second = self.first.clone();
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in params.ids() {
            let i = id.index();
            let grad = params.grad(id).data().to_vec();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = params.value_mut(id).data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut ParamTape, state: &mut AdamState) -> Result<()> {
    state.step(params)
}
