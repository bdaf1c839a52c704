use rand::Rng;

use super::{Cohort, DataError};
use crate::survival::SurvivalLabel;
use crate::tensor::Tensor;

/// 75% nearest-rank quantile of bag sizes: the smallest size whose cumulative
/// proportion reaches 0.75.
pub fn bag_cap(sizes: &[usize]) -> Result<usize, DataError> {
    if sizes.is_empty() {
        return Err(DataError::Invalid("bag_cap of an empty size list".into()));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let rank = (3 * sorted.len()).div_ceil(4).max(1);
    Ok(sorted[rank - 1])
}

/// A bag brought to exactly `n_cap` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBag {
    pub features: Tensor,
    pub mask: Vec<bool>,
    /// Original row index behind each slot, `None` for padding.
    pub source: Vec<Option<usize>>,
}

/// Uniformly subsamples without replacement when the bag is larger than
/// `n_cap`, zero-pads (masked out) when smaller.
pub fn subsample_or_pad<R: Rng + ?Sized>(
    features: &Tensor,
    n_cap: usize,
    rng: &mut R,
) -> Result<PaddedBag, DataError> {
    if n_cap == 0 {
        return Err(DataError::Invalid("n_cap must be at least 1".into()));
    }
    let (n, d) = (features.rows(), features.cols());
    let mut source: Vec<Option<usize>> = if n > n_cap {
        let mut picked = rand::seq::index::sample(rng, n, n_cap).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(Some).collect()
    } else {
        (0..n).map(Some).collect()
    };
    source.resize(n_cap, None);
    let mut data = vec![0.0; n_cap * d];
    for (slot, src) in source.iter().enumerate() {
        if let Some(i) = src {
            data[slot * d..(slot + 1) * d].copy_from_slice(features.row(*i));
        }
    }
    Ok(PaddedBag {
        features: Tensor::matrix(n_cap, d, data)?,
        mask: source.iter().map(Option::is_some).collect(),
        source,
    })
}

/// A minibatch of equally sized, masked bags.
#[derive(Clone, Debug)]
pub struct BatchedBags {
    pub bags: Vec<PaddedBag>,
    pub labels: Vec<SurvivalLabel>,
}

pub fn batch_bags<R: Rng + ?Sized>(
    cohort: &Cohort,
    indices: &[usize],
    n_cap: usize,
    rng: &mut R,
) -> Result<BatchedBags, DataError> {
    let bags = indices
        .iter()
        .map(|&i| subsample_or_pad(&cohort.patients()[i].bag.features, n_cap, rng))
        .collect::<Result<_, _>>()?;
    Ok(BatchedBags {
        bags,
        labels: cohort.labels_of(indices),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cap_examples() {
        assert_eq!(bag_cap(&[1, 2, 3, 4]).unwrap(), 3);
        assert_eq!(bag_cap(&[7; 9]).unwrap(), 7);
        assert_eq!(bag_cap(&(1..=100).collect::<Vec<_>>()).unwrap(), 75);
        assert_eq!(bag_cap(&[4, 1, 3, 2]).unwrap(), 3);
        assert_eq!(bag_cap(&[5]).unwrap(), 5);
        assert!(bag_cap(&[]).is_err());
    }

    fn numbered(n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|i| (i / d + 1) as f64).collect()).unwrap()
    }

    #[test]
    fn pads_small_bags() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = subsample_or_pad(&numbered(2, 3), 4, &mut rng).unwrap();
        assert_eq!(p.mask, vec![true, true, false, false]);
        assert_eq!(p.features.row(1), &[2.0; 3]);
        assert_eq!(p.features.row(2), &[0.0; 3]);
        assert_eq!(p.features.row(3), &[0.0; 3]);
    }

    #[test]
    fn exact_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = numbered(4, 2);
        let p = subsample_or_pad(&x, 4, &mut rng).unwrap();
        assert_eq!(p.features, x);
        assert!(p.mask.iter().all(|&m| m));
    }

    #[test]
    fn subsampling_is_valid_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = numbered(10, 1);
        let mut counts = [0usize; 10];
        let draws = 1000;
        for _ in 0..draws {
            let p = subsample_or_pad(&x, 4, &mut rng).unwrap();
            let idx: Vec<usize> = p.source.iter().map(|s| s.unwrap()).collect();
            let mut uniq = idx.clone();
            uniq.dedup();
            assert_eq!(uniq.len(), 4);
            for (slot, &i) in idx.iter().enumerate() {
                assert!(i < 10);
                assert_eq!(p.features.get(slot, 0), (i + 1) as f64);
                counts[i] += 1;
            }
        }
        let expected = (draws * 4) as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom, p = 0.001
        assert!(chi2 < 27.88, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn padding_never_fabricates_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..8 {
            let p = subsample_or_pad(&numbered(n, 3), 5, &mut rng).unwrap();
            assert_eq!(p.mask.iter().filter(|&&m| m).count(), n.min(5));
            for (slot, &m) in p.mask.iter().enumerate() {
                if !m {
                    assert!(p.features.row(slot).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
