//! Two-layer perceptrons shared by every model in the pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Linear {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w).expect("positive dims"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// `in → hidden (ReLU) → out`, applied row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

/// Tape handles for one binding of an [`Mlp`].
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl Mlp {
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::glorot(input, hidden, rng),
            output: Linear::glorot(hidden, output, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_dim()
    }

    /// Records the weights; `trainable = false` freezes them for this pass.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut rec = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t.clone())
            }
        };
        MlpVars {
            w1: rec(&self.hidden.weight),
            b1: rec(&self.hidden.bias),
            w2: rec(&self.output.weight),
            b2: rec(&self.output.bias),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(shape_err(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                tape.value(x).cols()
            )));
        }
        let h = tape.matmul(x, vars.w1)?;
        let h = tape.add_row(h, vars.b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, vars.w2)?;
        tape.add_row(o, vars.b2)
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &MlpVars) {
        grads.accumulate_into(vars.w1, &mut self.hidden.weight);
        grads.accumulate_into(vars.b1, &mut self.hidden.bias);
        grads.accumulate_into(vars.w2, &mut self.output.weight);
        grads.accumulate_into(vars.b2, &mut self.output.bias);
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    /// Forward pass outside any training loop.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(out).clone())
    }
}
