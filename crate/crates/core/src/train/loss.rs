//! Focal loss in a numerically stable logit-space form.
//!
//! Per sample with label y and logit z:
//!   s_t    = z if y=1 else -z          (signed logit of the true class)
//!   log p_t = logsigmoid(s_t)
//!   loss   = -alpha_t * (1 - p_t)^gamma * log p_t
//! with (1-p_t)^gamma computed as exp(gamma * logsigmoid(-s_t)) and the log
//! argument clamped at -80 so the power cannot underflow the gradient path.
//! Probability-space evaluation overflows for |z| beyond ~700; this form is
//! stable for |z| up to 500 and beyond. The batch reduction is the mean.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Largest logit magnitude the loss is guaranteed stable for.
pub const STABLE_LOGIT_RANGE: f64 = 500.0;
const LOG_CLAMP: f64 = -80.0;

/// Mean focal loss of `logits` (shape (B,)) against binary `targets`.
/// `gamma = 0` reduces exactly to alpha-weighted binary cross-entropy.
pub fn focal_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("focal alpha {alpha} outside (0, 1)")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("focal gamma {gamma} must be finite and >= 0")));
    }
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 1 || shape[0] != targets.len() || targets.is_empty() {
        return Err(Error::Contract(format!(
            "focal loss needs logits (B,) matching {} targets, got shape {shape:?}",
            targets.len()
        )));
    }
    if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("focal loss targets must be 0 or 1".into()));
    }

    let sign: Vec<f64> = targets.iter().map(|&y| 2.0 * y - 1.0).collect();
    let neg_alpha_t: Vec<f64> =
        targets.iter().map(|&y| if y == 1.0 { -alpha } else { alpha - 1.0 }).collect();
    let b = targets.len();

    let sign_c = tape.constant(&[b], sign)?;
    let s_t = tape.mul(logits, sign_c)?;
    let log_pt = tape.log_sigmoid(s_t);
    let neg_s = tape.scale(s_t, -1.0);
    let log_one_minus = tape.log_sigmoid(neg_s);
    let clamped = tape.clamp_min(log_one_minus, LOG_CLAMP);
    let powered = tape.scale(clamped, gamma);
    let focal_factor = tape.exp(powered);
    let per_sample = tape.mul(focal_factor, log_pt)?;
    let weights = tape.constant(&[b], neg_alpha_t)?;
    let weighted = tape.mul(per_sample, weights)?;
    Ok(tape.mean_all(weighted))
}
