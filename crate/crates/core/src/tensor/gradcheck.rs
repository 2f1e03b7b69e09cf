//! Central-difference verification of reverse-mode gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at `x` and returns the worst relative error over all
/// coordinates.
///
/// `f` must build the computation from scratch on the tape it is given and
/// return a scalar output. `h` is the probe step; values outside
/// [1e-6, 1e-3] trade truncation against cancellation badly enough to make
/// the check meaningless and are rejected.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Parameter(format!(
            "finite difference step {h} outside [1e-6, 1e-3]"
        )));
    }

    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point);
        let out = f(&mut tape, v)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "finite_diff_check needs a scalar-valued function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok(tape.scalar_value(out))
    };

    // Analytic gradient at x.
    let mut tape = Tape::new();
    let probe = x.clone().trainable();
    let v = tape.leaf(&probe);
    let out = f(&mut tape, v)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "finite_diff_check needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    tape.backward(out)?;
    let analytic = tape.grad(v).to_vec();

    let mut worst = 0.0_f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.values_mut()[i] += h;
        let mut minus = x.clone();
        minus.values_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// [`finite_diff_check`] generalized to a function of several tensors:
/// every coordinate of every input is probed. Used to verify whole-model
/// losses where the parameters live in many tensors.
pub fn finite_diff_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Parameter(format!(
            "finite difference step {h} outside [1e-6, 1e-3]"
        )));
    }

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "finite_diff_check_multi needs a scalar-valued function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok(tape.scalar_value(out))
    };

    let mut tape = Tape::new();
    let probes: Vec<Tensor> = xs.iter().map(|t| t.clone().trainable()).collect();
    let vars: Vec<Var> = probes.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "finite_diff_check_multi needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let mut worst = 0.0_f64;
    let mut work: Vec<Tensor> = xs.to_vec();
    for t in 0..xs.len() {
        for i in 0..xs[t].numel() {
            let base = xs[t].values()[i];
            work[t].values_mut()[i] = base + h;
            let up = eval(&work)?;
            work[t].values_mut()[i] = base - h;
            let down = eval(&work)?;
            work[t].values_mut()[i] = base;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[t][i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[t][i] - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
