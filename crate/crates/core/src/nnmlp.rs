//! Constrained non-negative MLP baseline.
//!
//! Two ReLU hidden layers and a linear output, with all weights kept
//! non-negative and the hidden biases non-positive by projection after
//! every optimizer step. Under those sign constraints the logit is
//! monotone non-decreasing in every input coordinate, inputs are required
//! to be non-negative, and the all-zeros input reproduces sigmoid(b3)
//! exactly (the model's baseline risk).

use crate::error::{Error, Result};
use crate::model::ParamBreakdown;
use crate::tensor::{sigmoid, Activation, Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NnMlpConfig {
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for NnMlpConfig {
    fn default() -> Self {
        NnMlpConfig { hidden1: 64, hidden2: 64 }
    }
}

impl NnMlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NnMlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

pub struct NnMlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl NnMlpParams {
    /// Feasible starting point: weights uniform in [0, 1/sqrt(fan_in)),
    /// hidden biases uniform in [-0.1, 0), and the output bias at the logit
    /// of the training positive rate so the initial baseline risk matches
    /// the class balance.
    pub fn init(
        d: usize,
        config: &NnMlpConfig,
        positive_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if !(positive_rate > 0.0 && positive_rate < 1.0) {
            return Err(Error::Parameter(format!(
                "positive rate {positive_rate} outside (0, 1)"
            )));
        }
        let (h1, h2) = (config.hidden1, config.hidden2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let values = (0..rows * cols).map(|_| rng.gen_range(0.0..bound)).collect();
            Tensor::new(&[rows, cols], values).expect("static shape").trainable()
        };
        let w1 = weights(d, h1, d);
        let w2 = weights(h1, h2, h1);
        let w3 = weights(h2, 1, h2);
        let mut biases = |n: usize| {
            let values = (0..n).map(|_| rng.gen_range(-0.1..0.0)).collect();
            Tensor::new(&[n], values).expect("static shape").trainable()
        };
        let b1 = biases(h1);
        let b2 = biases(h2);
        let b3 = Tensor::new(&[1], vec![(positive_rate / (1.0 - positive_rate)).ln()])
            .expect("static shape")
            .trainable();
        Ok(NnMlpParams { w1, b1, w2, b2, w3, b3 })
    }

    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
            ("w3".into(), &self.w3),
            ("b3".into(), &self.b3),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w1".into(), &mut self.w1),
            ("b1".into(), &mut self.b1),
            ("w2".into(), &mut self.w2),
            ("b2".into(), &mut self.b2),
            ("w3".into(), &mut self.w3),
            ("b3".into(), &mut self.b3),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> NnMlpVars {
        NnMlpVars {
            w1: tape.named_leaf(&self.w1, "w1"),
            b1: tape.named_leaf(&self.b1, "b1"),
            w2: tape.named_leaf(&self.w2, "w2"),
            b2: tape.named_leaf(&self.b2, "b2"),
            w3: tape.named_leaf(&self.w3, "w3"),
            b3: tape.named_leaf(&self.b3, "b3"),
        }
    }

    pub fn vars_from_slice(&self, vars: &[Var]) -> Result<NnMlpVars> {
        if vars.len() != 6 {
            return Err(Error::Contract(format!(
                "expected 6 parameter vars, got {}",
                vars.len()
            )));
        }
        Ok(NnMlpVars {
            w1: vars[0],
            b1: vars[1],
            w2: vars[2],
            b2: vars[3],
            w3: vars[4],
            b3: vars[5],
        })
    }

    /// Euclidean projection onto the constraint set: weights clamped up to
    /// 0, hidden biases clamped down to 0. Idempotent; b3 is untouched.
    pub fn project_constraints(&mut self) {
        for w in [&mut self.w1, &mut self.w2, &mut self.w3] {
            for v in w.values_mut() {
                *v = v.max(0.0);
            }
        }
        for b in [&mut self.b1, &mut self.b2] {
            for v in b.values_mut() {
                *v = v.min(0.0);
            }
        }
    }

    pub fn constraints_ok(&self) -> bool {
        let weights_ok = [&self.w1, &self.w2, &self.w3]
            .iter()
            .all(|w| w.values().iter().all(|&v| v >= 0.0));
        let biases_ok = [&self.b1, &self.b2]
            .iter()
            .all(|b| b.values().iter().all(|&v| v <= 0.0));
        weights_ok && biases_ok
    }

    /// Predicted probability for the all-zeros input: sigmoid(b3).
    pub fn baseline_risk(&self) -> f64 {
        sigmoid(self.b3.values()[0])
    }

    pub fn count(&self) -> ParamBreakdown {
        ParamBreakdown {
            parts: vec![
                ("layer1".to_string(), self.w1.numel() + self.b1.numel()),
                ("layer2".to_string(), self.w2.numel() + self.b2.numel()),
                ("head".to_string(), self.w3.numel() + self.b3.numel()),
            ],
        }
    }
}

/// Forward pass over a non-negative design matrix: x (B, d) -> logits (B,).
///
/// Negative inputs break the monotonicity guarantee, so they are rejected
/// rather than silently accepted.
pub fn nnmlp_forward(tape: &mut Tape, x: &[f64], batch: usize, vars: &NnMlpVars) -> Result<Var> {
    let d = tape.shape(vars.w1)[0];
    if x.len() != batch * d {
        return Err(Error::Contract(format!(
            "expected {batch}x{d} inputs, got {} values",
            x.len()
        )));
    }
    if let Some(bad) = x.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Contract(format!(
            "negative or non-finite input {bad} fed to the non-negative model"
        )));
    }
    let xv = tape.constant(&[batch, d], x.to_vec())?;
    let z1 = tape.matmul(xv, vars.w1)?;
    let z1 = tape.add_row_bias(z1, vars.b1)?;
    let z1 = tape.activation(z1, Activation::Relu);
    let z2 = tape.matmul(z1, vars.w2)?;
    let z2 = tape.add_row_bias(z2, vars.b2)?;
    let z2 = tape.activation(z2, Activation::Relu);
    let y = tape.matmul(z2, vars.w3)?;
    let y = tape.add_row_bias(y, vars.b3)?;
    tape.reshape(y, &[batch])
}
