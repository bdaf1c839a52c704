use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// One train/test partition of patient indices (both sides sorted).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `n_resamples` random permutation splits with `round(fraction · n)`
/// training patients each. Resample `r` draws from stream `r` of a ChaCha
/// generator seeded with `seed`.
pub fn resample_splits(
    n: usize,
    fraction: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<Split>, DataError> {
    if n < 2 {
        return Err(DataError::Invalid("splitting needs at least 2 patients".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!("train fraction {fraction} outside (0, 1)")));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((0..n_resamples)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut train = order[..n_train].to_vec();
            let mut test = order[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}
