//! Adam with bias correction. The learning rate lives in the hyperparameter
//! struct and may be lowered between steps by a schedule.

use super::{Model, ModelGrads};
use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment accumulators for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update on a flat parameter block. `step` is the 1-based step
/// counter after this update.
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState,
    step: u64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(invalid("adam update requires equally sized parameter, gradient and moment blocks"));
    }
    if step == 0 {
        return Err(invalid("adam step counter must be >= 1"));
    }
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = to_f64(grads[i]);
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let update = hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        params[i] = cast::<T>(to_f64(params[i]) - update);
    }
    Ok(())
}

/// Optimizer state for a whole model: one moment pair per parameter block,
/// in the order `Model::apply` visits them.
#[derive(Debug, Clone)]
pub struct ModelOptimizer {
    pub states: Vec<AdamState>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl ModelOptimizer {
    pub fn new<T: Scalar>(model: &Model<T>, hyper: AdamHyper) -> Self {
        Self {
            states: model
                .param_blocks()
                .iter()
                .map(|b| AdamState::zeros(b.len()))
                .collect(),
            step: 0,
            hyper,
        }
    }

    /// Applies one Adam step to every parameter block of the model.
    pub fn step<T: Scalar>(&mut self, model: &mut Model<T>, grads: &ModelGrads<T>) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let hyper = self.hyper;
        let mut flat_grads: Vec<&[T]> = Vec::with_capacity(self.states.len());
        for g in &grads.layers {
            flat_grads.push(g.kernels.data());
            flat_grads.push(g.biases.as_slice());
        }
        if flat_grads.len() != self.states.len() {
            return Err(invalid("gradient block count does not match optimizer state"));
        }
        let states = &mut self.states;
        let mut result = Ok(());
        model.apply(|params, block| {
            if result.is_ok() {
                result = adam_update(params, flat_grads[block], &mut states[block], step, &hyper);
            }
        });
        result
    }
}
