use super::TrainError;
use crate::mil::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First/second moment estimates shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    /// Per-parameter switch for weight decay.
    decay: Vec<bool>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            step: 0,
            decay: vec![true; params.len()],
        }
    }

    /// Exempts the named parameter from weight decay.
    pub fn exempt_from_decay(&mut self, params: &ParamStore, name: &str) {
        for (i, (n, _)) in params.iter().enumerate() {
            if n == name {
                self.decay[i] = false;
            }
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update followed by decoupled decay
/// `p ← p · (1 - lr · weight_decay)`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                name: params.name(i).to_string(),
                step: state.step + 1,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let decay = if state.decay[i] {
            1.0 - cfg.lr * cfg.weight_decay
        } else {
            1.0
        };
        for (((x, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *x *= decay;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("x", Tensor::vector(values).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![1.0, -2.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![0.0, 0.0]).unwrap()], &mut st, &cfg(1e-3, 0.0)).unwrap();
        assert_eq!(p.tensor(0).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.7, -0.002, 1e4] {
            let mut p = store(vec![0.5]);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::vector(vec![g]).unwrap()], &mut st, &cfg(0.01, 0.0)).unwrap();
            let moved = 0.5 - p.tensor(0).data()[0];
            assert!((moved - 0.01 * g.signum()).abs() < 1e-7, "g={g}: {moved}");
        }
    }

    #[test]
    fn decoupled_decay_is_multiplicative() {
        let mut p = store(vec![2.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![0.0]).unwrap()], &mut st, &cfg(0.1, 0.5)).unwrap();
        assert!((p.tensor(0).data()[0] - 2.0 * 0.95).abs() < 1e-15);
        let mut st = AdamState::new(&p);
        st.exempt_from_decay(&p, "x");
        let before = p.tensor(0).data()[0];
        adam_step(&mut p, &[Tensor::vector(vec![0.0]).unwrap()], &mut st, &cfg(0.1, 0.5)).unwrap();
        assert_eq!(p.tensor(0).data()[0], before);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = store(vec![1.0, 1.0]);
        let mut st = AdamState::new(&p);
        for _ in 0..200 {
            let g: Vec<f64> = p.tensor(0).data().iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &[Tensor::vector(g).unwrap()], &mut st, &cfg(0.05, 0.0)).unwrap();
        }
        let norm = p.tensor(0).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "{norm}");
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = store(vec![1.0]);
        let mut st = AdamState::new(&p);
        let r = adam_step(&mut p, &[Tensor::vector(vec![1.0]).unwrap()], &mut st, &cfg(0.1, 0.0));
        assert!(r.is_ok());
        let snapshot = (p.clone(), st.clone());
        let bad = Tensor::new(vec![1], vec![f64::NAN]);
        // Tensor::new accepts NaN; the optimiser must reject it
        let r = adam_step(&mut p, &[bad.unwrap()], &mut st, &cfg(0.1, 0.0));
        assert!(matches!(r, Err(TrainError::NonFiniteGradient { .. })));
        assert_eq!((p, st), snapshot);
    }
}
