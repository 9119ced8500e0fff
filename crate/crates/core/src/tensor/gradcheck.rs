//! Central finite-difference gradient checking in 64-bit precision.

use super::{Tape, Tensor, TensorError, Var};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so vanishing gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<E, F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    value
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(value.shape().to_vec()).into())
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the scalar `f` with respect to every element of `inputs`.
pub fn check_gradients<E, F>(inputs: &[Tensor<f64>], f: F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + FD_STEP;
            let up = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x0 - FD_STEP;
            let down = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(*v).map_or(0.0, |g| g.data()[j]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}
