use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }

    fn validate(&self, param: &Tensor) -> Result<()> {
        if self.first_moment.len() != param.numel() || self.second_moment.len() != param.numel() {
            return Err(Error::State(format!(
                "moment length {} does not match parameter of {} values",
                self.first_moment.len(),
                param.numel()
            )));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::State("betas must lie in (0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::State("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update per parameter; clears every gradient.
pub fn adam_step(params: &mut [&mut Tensor], states: &mut [AdamState]) -> Result<()> {
    if params.len() != states.len() {
        return Err(Error::State(format!(
            "{} parameters but {} optimizer states",
            params.len(),
            states.len()
        )));
    }
    for (i, (p, s)) in params.iter().zip(states.iter()).enumerate() {
        s.validate(p)?;
        if p.grad().is_none() {
            return Err(Error::State(format!("parameter {i} has no gradient")));
        }
    }
    for (p, s) in params.iter_mut().zip(states.iter_mut()) {
        s.step += 1;
        let bc1 = 1.0 - s.beta1.powi(s.step as i32);
        let bc2 = 1.0 - s.beta2.powi(s.step as i32);
        let grad = p.grad().expect("checked above").to_vec();
        let data = p.data_mut();
        for (j, g) in grad.iter().enumerate() {
            let m = s.beta1 * s.first_moment[j] + (1.0 - s.beta1) * g;
            let v = s.beta2 * s.second_moment[j] + (1.0 - s.beta2) * g * g;
            s.first_moment[j] = m;
            s.second_moment[j] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            data[j] -= s.learning_rate * m_hat / (v_hat.sqrt() + s.epsilon);
        }
        p.clear_grad();
    }
    Ok(())
}

/// Adam over a fixed parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &[&Tensor], learning_rate: f64) -> Self {
        Self {
            states: params
                .iter()
                .map(|p| AdamState::new(p.numel(), learning_rate))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        adam_step(params, &mut self.states)
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.states.iter_mut().for_each(|s| s.learning_rate = lr);
    }

    pub fn learning_rate(&self) -> f64 {
        self.states.first().map(|s| s.learning_rate).unwrap_or(0.0)
    }
}
