//! Attention mean pooling and attention variance pooling.
//!
//! The tape functions are what the model runs; the `*_values` helpers wrap
//! them for callers holding plain tensors.

use super::{EtaKind, ModelError};
use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// `p_mean = Σ_j a_j h_j`.
pub fn mean_pool(tape: &mut Tape, h: Var, a: Var) -> Result<Var, ModelError> {
    Ok(tape.weighted_sum(h, a)?)
}

/// First index carrying positive weight. Variance is shift invariant, so
/// centring on this row first changes nothing mathematically, keeps padded
/// rows out of the picture and makes a constant bag produce exactly zero.
fn reference_index(weights: &[f64]) -> Result<usize, ModelError> {
    weights
        .iter()
        .position(|&w| w > 0.0)
        .ok_or(ModelError::EmptyBag)
}

/// Attention-weighted variance of each column of the n×K matrix `u`:
/// `Σ_j a_j (u_jk - Σ_l a_l u_lk)²`.
fn weighted_column_variance(tape: &mut Tape, u: Var, a: Var) -> Result<Var, ModelError> {
    let (n, k) = (tape.value(u).rows(), tape.value(u).cols());
    if tape.value(a).len() != n {
        return Err(ModelError::Mask {
            mask: tape.value(a).len(),
            rows: n,
        });
    }
    let r = reference_index(tape.value(a).data())?;
    let flat = tape.reshape(u, vec![n * k])?;
    let reference = tape.gather(flat, &(r * k..(r + 1) * k).collect::<Vec<_>>())?;
    let neg_ref = tape.neg(reference)?;
    let shifted = tape.add_row(u, neg_ref)?;
    let mean = tape.weighted_sum(shifted, a)?;
    let neg_mean = tape.neg(mean)?;
    let resid = tape.add_row(shifted, neg_mean)?;
    let sq = tape.square(resid)?;
    Ok(tape.weighted_sum(sq, a)?)
}

/// Attention variance of a vector `u` of length n; a scalar.
pub fn attn_variance(tape: &mut Tape, u: Var, a: Var) -> Result<Var, ModelError> {
    let n = tape.value(u).len();
    let col = tape.reshape(u, vec![n, 1])?;
    let v = weighted_column_variance(tape, col, a)?;
    Ok(tape.reshape(v, vec![])?)
}

/// Variance pool: entry k is the attention variance of `H v_k`.
pub fn variance_pool(tape: &mut Tape, h: Var, a: Var, projections: Var) -> Result<Var, ModelError> {
    let u = tape.matmul(h, projections)?;
    weighted_column_variance(tape, u, a)
}

/// Entrywise nonlinearity on the raw variance pool.
pub fn eta(tape: &mut Tape, p: Var, kind: EtaKind, eps: f64) -> Result<Var, ModelError> {
    if let Some(&bad) = tape.value(p).data().iter().find(|&&v| v < 0.0) {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Domain {
            op: "eta",
            value: bad,
        }));
    }
    Ok(match kind {
        EtaKind::Log => {
            let shifted = tape.add_scalar(p, eps)?;
            tape.log(shifted)?
        }
        EtaKind::Sqrt => tape.sqrt(p)?,
        EtaKind::Sigmoid => tape.sigmoid(p)?,
    })
}

fn weights_var(tape: &mut Tape, a: &[f64]) -> Result<Var, ModelError> {
    Ok(tape.constant(Tensor::vector(a.to_vec())?)?)
}

pub fn mean_pool_values(h: &Tensor, a: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut t = Tape::new();
    let hv = t.constant(h.clone())?;
    let av = weights_var(&mut t, a)?;
    let out = mean_pool(&mut t, hv, av)?;
    Ok(t.value(out).data().to_vec())
}

pub fn attn_variance_values(u: &[f64], a: &[f64]) -> Result<f64, ModelError> {
    let mut t = Tape::new();
    let uv = t.constant(Tensor::vector(u.to_vec())?)?;
    let av = weights_var(&mut t, a)?;
    let out = attn_variance(&mut t, uv, av)?;
    Ok(t.value(out).item())
}

pub fn variance_pool_values(h: &Tensor, a: &[f64], projections: &Tensor) -> Result<Vec<f64>, ModelError> {
    let mut t = Tape::new();
    let hv = t.constant(h.clone())?;
    let av = weights_var(&mut t, a)?;
    let vv = t.constant(projections.clone())?;
    let out = variance_pool(&mut t, hv, av, vv)?;
    Ok(t.value(out).data().to_vec())
}

pub fn eta_values(p: &[f64], kind: EtaKind, eps: f64) -> Result<Vec<f64>, ModelError> {
    let mut t = Tape::new();
    let pv = t.constant(Tensor::vector(p.to_vec())?)?;
    let out = eta(&mut t, pv, kind, eps)?;
    Ok(t.value(out).data().to_vec())
}
