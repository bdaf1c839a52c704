use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::mil::{param_layout, ModelConfig, ModelError, ParamRole, ParamStore};
use crate::tensor::Tensor;

/// Fresh parameters for `config`.
///
/// Dense weights are Kaiming-uniform with `a = √5`, i.e. `U(±1/√fan_in)`;
/// biases start at zero; each variance projection entry is drawn from
/// `N(0, 1/e)`, so the K columns are close to orthonormal when `e` is large.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_layout(config) {
        let numel: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.role {
            ParamRole::Weight { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..numel).map(|_| dist.sample(&mut rng)).collect()
            }
            ParamRole::Bias => vec![0.0; numel],
            ParamRole::Projection => {
                let e = spec.shape[0] as f64;
                let dist = Normal::new(0.0, 1.0 / e.sqrt()).expect("positive std");
                (0..numel).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        store.push(spec.name, Tensor::new(spec.shape, data)?);
    }
    Ok(store)
}
