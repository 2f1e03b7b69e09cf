//! Adam and RMSProp with the fixed hyperparameters used downstream.
//!
//! State vectors are lazily sized on the first step and keyed by parameter
//! position, so the caller must pass tensors in the same order every step
//! (the canonical `named` order guarantees this).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const RMSPROP_SQUARE_DECAY: f64 = 0.99;
pub const RMSPROP_MOMENTUM: f64 = 0.9;
pub const RMSPROP_WEIGHT_DECAY: f64 = 1e-3;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    RmsProp,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected adam or rmsprop)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RmsPropState {
    square_avg: Vec<Vec<f64>>,
    momentum_buf: Vec<Vec<f64>>,
}

fn check_alignment(
    state_len: usize,
    params: &[&mut Tensor],
    grads: &[Vec<f64>],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameter tensors but {} gradient vectors",
            params.len(),
            grads.len()
        )));
    }
    if state_len != 0 && state_len != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {state_len} tensors, step got {}",
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match parameter of {} values",
                g.len(),
                p.numel()
            )));
        }
    }
    Ok(())
}

/// Canonical bias-corrected Adam update, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    lr: f64,
) -> Result<()> {
    check_alignment(state.m.len(), params, grads)?;
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for ((pv, &gv), (mv, vv)) in
            p.values_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// RMSProp with momentum and coupled weight decay (decay added to the
/// gradient before the squared average), in place.
pub fn rmsprop_step(
    state: &mut RmsPropState,
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_alignment(state.square_avg.len(), params, grads)?;
    if state.square_avg.is_empty() {
        state.square_avg = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.momentum_buf = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    for ((p, g), (sq, buf)) in params.iter_mut().zip(grads).zip(
        state.square_avg.iter_mut().zip(state.momentum_buf.iter_mut()),
    ) {
        for ((pv, &gv), (sv, bv)) in
            p.values_mut().iter_mut().zip(g).zip(sq.iter_mut().zip(buf.iter_mut()))
        {
            let grad = gv + weight_decay * *pv;
            *sv = RMSPROP_SQUARE_DECAY * *sv + (1.0 - RMSPROP_SQUARE_DECAY) * grad * grad;
            let avg = sv.sqrt() + RMSPROP_EPS;
            *bv = momentum * *bv + grad / avg;
            *pv -= lr * *bv;
        }
    }
    Ok(())
}

/// Runtime dispatch over the two optimizers with their fixed settings.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Adam(AdamState),
    RmsProp(RmsPropState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => OptimizerState::Adam(AdamState::default()),
            OptimizerKind::RmsProp => OptimizerState::RmsProp(RmsPropState::default()),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        match self {
            OptimizerState::Adam(s) => adam_step(s, params, grads, lr),
            OptimizerState::RmsProp(s) => rmsprop_step(
                s,
                params,
                grads,
                lr,
                RMSPROP_MOMENTUM,
                RMSPROP_WEIGHT_DECAY,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap().trainable()
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut state = AdamState::default();
        let mut p = scalar(0.0);
        adam_step(&mut state, &mut [&mut p], &[vec![2.0]], 0.001).unwrap();
        // m_hat = g, v_hat = g^2, update = -lr * g/(|g|+eps).
        let expected = -0.001 * (2.0 / (2.0 + ADAM_EPS));
        assert!((p.values()[0] - expected).abs() < 1e-18);
        assert!((p.values()[0] + 0.001).abs() < 1e-6, "magnitude ~= lr");

        let mut q = scalar(0.0);
        let mut s2 = AdamState::default();
        adam_step(&mut s2, &mut [&mut q], &[vec![-2.0]], 0.001).unwrap();
        assert!((q.values()[0] - 0.001).abs() < 1e-6, "sign follows -sign(g)");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::default();
        let mut p = scalar(1.5);
        for _ in 0..5 {
            adam_step(&mut state, &mut [&mut p], &[vec![0.0]], 0.1).unwrap();
        }
        assert_eq!(p.values(), &[1.5]);
    }

    #[test]
    fn adam_two_steps_match_hand_computation() {
        let mut state = AdamState::default();
        let mut p = scalar(1.0);
        let (g1, g2, lr) = (0.3, -0.2, 0.01);
        adam_step(&mut state, &mut [&mut p], &[vec![g1]], lr).unwrap();
        adam_step(&mut state, &mut [&mut p], &[vec![g2]], lr).unwrap();

        let mut m = 0.0;
        let mut v = 0.0;
        let mut x = 1.0;
        for (t, g) in [(1, g1), (2, g2)] {
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let mh = m / (1.0 - ADAM_BETA1.powi(t));
            let vh = v / (1.0 - ADAM_BETA2.powi(t));
            x -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        assert_eq!(p.values(), &[x]);
    }

    #[test]
    fn rmsprop_single_step_matches_hand_computation() {
        let mut state = RmsPropState::default();
        let mut p = scalar(1.0);
        rmsprop_step(&mut state, &mut [&mut p], &[vec![0.5]], 0.1, 0.9, 1e-3).unwrap();

        let g: f64 = 0.5 + 1e-3 * 1.0;
        let sq = 0.01 * g * g;
        let buf = g / (sq.sqrt() + RMSPROP_EPS);
        let expected = 1.0 - 0.1 * buf;
        assert!((p.values()[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn rmsprop_weight_decay_shrinks_params_without_gradients() {
        let mut state = RmsPropState::default();
        let mut p = scalar(2.0);
        let before = p.values()[0];
        rmsprop_step(&mut state, &mut [&mut p], &[vec![0.0]], 0.01, 0.9, 1e-3).unwrap();
        assert!(p.values()[0] < before, "decay must pull weights toward zero");

        // Zero decay and zero gradient: nothing moves.
        let mut q = scalar(2.0);
        let mut s2 = RmsPropState::default();
        rmsprop_step(&mut s2, &mut [&mut q], &[vec![0.0]], 0.01, 0.9, 0.0).unwrap();
        assert_eq!(q.values(), &[2.0]);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = |kind: OptimizerKind| {
            let mut state = OptimizerState::new(kind);
            let mut p = scalar(0.7);
            for i in 0..10 {
                let g = 0.1 * (i as f64 - 4.0);
                state.step(&mut [&mut p], &[vec![g]], 0.05).unwrap();
            }
            p.values()[0]
        };
        assert_eq!(run(OptimizerKind::Adam), run(OptimizerKind::Adam));
        assert_eq!(run(OptimizerKind::RmsProp), run(OptimizerKind::RmsProp));
    }

    #[test]
    fn misaligned_inputs_error() {
        let mut state = AdamState::default();
        let mut p = scalar(0.0);
        assert!(adam_step(&mut state, &mut [&mut p], &[vec![0.0, 1.0]], 0.1).is_err());
        assert!(adam_step(&mut state, &mut [&mut p], &[], 0.1).is_err());
    }

    #[test]
    fn optimizer_kind_parsing() {
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert_eq!("rmsprop".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
        assert!("sgd".parse::<OptimizerKind>().is_err());
    }
}
