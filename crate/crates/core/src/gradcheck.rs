//! Central finite-difference checks for tape gradients.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Denominator guard in [`max_relative_error`].
pub const DENOM_GUARD: f64 = 1e-8;

/// Largest coordinatewise `|a - n| / (max(|a|, |n|) + 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs().max(n.abs()) + DENOM_GUARD))
        .fold(0.0, f64::max)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_differences<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the tape gradient of a scalar function of one tensor against
/// central differences and returns the max relative error.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone())?;
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tape.grad_tensor(leaf);

    let shape = x.shape().to_vec();
    let numeric = central_differences(
        |probe| {
            let mut t = Tape::new();
            let leaf = t.param(Tensor::new(shape.clone(), probe.to_vec())?)?;
            let out = f(&mut t, leaf)?;
            Ok(t.value(out).item())
        },
        x.data(),
        h,
    )?;
    Ok(max_relative_error(analytic.data(), &numeric))
}
