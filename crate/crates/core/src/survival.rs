//! Comparable pairs, the sigmoid ranking loss, the concordance index and the
//! Cox partial-likelihood loss.

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("survival time must be positive and finite, got {0}")]
    BadTime(f64),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("no uncensored events")]
    NoEvents,
    #[error("{risks} risk scores for {labels} labels")]
    Length { risks: usize, labels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalLabel {
    time: f64,
    censored: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, censored: bool) -> Result<Self, SurvivalError> {
        if time > 0.0 && time.is_finite() {
            Ok(Self { time, censored })
        } else {
            Err(SurvivalError::BadTime(time))
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn censored(&self) -> bool {
        self.censored
    }

    pub fn event(&self) -> bool {
        !self.censored
    }
}

/// Ordered pairs `(w, b)` where `w` had an observed event strictly before
/// `b`'s time, i.e. `w` is known to have fared worse.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ComparablePairs(Vec<(usize, usize)>);

impl ComparablePairs {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn worse(&self) -> Vec<usize> {
        self.0.iter().map(|p| p.0).collect()
    }

    pub fn better(&self) -> Vec<usize> {
        self.0.iter().map(|p| p.1).collect()
    }
}

pub fn comparable_pairs(labels: &[SurvivalLabel]) -> ComparablePairs {
    let mut out = Vec::new();
    for (w, lw) in labels.iter().enumerate() {
        if lw.censored {
            continue;
        }
        for (b, lb) in labels.iter().enumerate() {
            if lw.time < lb.time {
                out.push((w, b));
            }
        }
    }
    ComparablePairs(out)
}

fn check_len(risks: usize, labels: usize) -> Result<(), SurvivalError> {
    if risks == labels {
        Ok(())
    } else {
        Err(SurvivalError::Length { risks, labels })
    }
}

/// Concordance index: `(concordant + ties / 2) / |C|`.
pub fn concordance_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64, SurvivalError> {
    check_len(risks.len(), labels.len())?;
    let pairs = comparable_pairs(labels);
    if pairs.is_empty() {
        return Err(SurvivalError::NoComparablePairs);
    }
    // counts in half-units so the ratio is formed once
    let mut half_units: u64 = 0;
    for &(w, b) in pairs.pairs() {
        if risks[w] > risks[b] {
            half_units += 2;
        } else if risks[w] == risks[b] {
            half_units += 1;
        }
    }
    Ok(half_units as f64 / (2 * pairs.len()) as f64)
}

/// `-(1/|C|) Σ_{(w,b)∈C} sigmoid(scale · (f_w - f_b))` over a vector of risks.
///
/// Errors with [`SurvivalError::NoComparablePairs`] so callers can skip the batch.
pub fn rank_loss(
    tape: &mut Tape,
    risks: Var,
    labels: &[SurvivalLabel],
    sigmoid_scale: f64,
) -> Result<Var, SurvivalError> {
    check_len(tape.value(risks).len(), labels.len())?;
    let pairs = comparable_pairs(labels);
    if pairs.is_empty() {
        return Err(SurvivalError::NoComparablePairs);
    }
    let fw = tape.gather(risks, &pairs.worse())?;
    let fb = tape.gather(risks, &pairs.better())?;
    let diff = tape.sub(fw, fb)?;
    let scaled = tape.scale(diff, sigmoid_scale)?;
    let psi = tape.sigmoid(scaled)?;
    let mean = tape.mean(psi)?;
    Ok(tape.neg(mean)?)
}

/// Negative Cox partial log-likelihood averaged over events, with risk sets
/// `{j : t_j >= t_i}` drawn from the given patients only.
pub fn cox_loss(tape: &mut Tape, risks: Var, labels: &[SurvivalLabel]) -> Result<Var, SurvivalError> {
    check_len(tape.value(risks).len(), labels.len())?;
    let events: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].event()).collect();
    if events.is_empty() {
        return Err(SurvivalError::NoEvents);
    }
    let mut terms = Vec::with_capacity(events.len());
    for &i in &events {
        let at_risk: Vec<usize> = (0..labels.len())
            .filter(|&j| labels[j].time >= labels[i].time)
            .collect();
        let set = tape.gather(risks, &at_risk)?;
        let lse = tape.logsumexp(set)?;
        let fi = tape.gather(risks, &[i])?;
        let fi = tape.reshape(fi, vec![])?;
        terms.push(tape.sub(fi, lse)?);
    }
    let all = tape.concat(&terms)?;
    let mean = tape.mean(all)?;
    Ok(tape.neg(mean)?)
}

/// Loss value on plain risks.
pub fn rank_loss_value(risks: &[f64], labels: &[SurvivalLabel], sigmoid_scale: f64) -> Result<f64, SurvivalError> {
    let mut t = Tape::new();
    let r = t.constant(Tensor::vector(risks.to_vec())?)?;
    let l = rank_loss(&mut t, r, labels, sigmoid_scale)?;
    Ok(t.value(l).item())
}

pub fn cox_loss_value(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64, SurvivalError> {
    let mut t = Tape::new();
    let r = t.constant(Tensor::vector(risks.to_vec())?)?;
    let l = cox_loss(&mut t, r, labels)?;
    Ok(t.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(times: &[f64], censored: &[bool]) -> Vec<SurvivalLabel> {
        times
            .iter()
            .zip(censored)
            .map(|(&t, &c)| SurvivalLabel::new(t, c).unwrap())
            .collect()
    }

    fn random_labels(rng: &mut ChaCha8Rng, n: usize, censor: f64) -> Vec<SurvivalLabel> {
        (0..n)
            .map(|_| SurvivalLabel::new(rng.random_range(0.1..10.0), rng.random_bool(censor)).unwrap())
            .collect()
    }

    #[test]
    fn label_validation() {
        assert!(SurvivalLabel::new(0.0, false).is_err());
        assert!(SurvivalLabel::new(f64::INFINITY, true).is_err());
        assert!(SurvivalLabel::new(-1.0, true).is_err());
    }

    #[test]
    fn pairs_examples() {
        let l = labels(&[1., 2., 3.], &[false; 3]);
        assert_eq!(comparable_pairs(&l).pairs(), &[(0, 1), (0, 2), (1, 2)]);
        let l = labels(&[1., 2., 3.], &[true; 3]);
        assert!(comparable_pairs(&l).is_empty());
        let l = labels(&[2., 4., 5., 1.], &[false, true, false, false]);
        assert_eq!(
            comparable_pairs(&l).pairs(),
            &[(0, 1), (0, 2), (3, 0), (3, 1), (3, 2)]
        );
        // tied times never compare
        let l = labels(&[2., 2.], &[false, false]);
        assert!(comparable_pairs(&l).is_empty());
    }

    #[test]
    fn cindex_examples() {
        let l = labels(&[1., 2., 3.], &[false; 3]);
        assert_eq!(concordance_index(&[3., 2., 1.], &l).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1., 2., 3.], &l).unwrap(), 0.0);
        assert_eq!(concordance_index(&[5., 5., 5.], &l).unwrap(), 0.5);
        let l = labels(&[2., 4., 5., 1.], &[false, true, false, false]);
        assert!((concordance_index(&[3., 1., 2., 0.], &l).unwrap() - 0.4).abs() < 1e-15);
        let l = labels(&[1., 2.], &[true, true]);
        assert!(matches!(
            concordance_index(&[1., 2.], &l),
            Err(SurvivalError::NoComparablePairs)
        ));
        assert!(concordance_index(&[1.], &l).is_err());
    }

    #[test]
    fn rank_loss_examples() {
        let l = labels(&[1., 2.], &[false, false]);
        assert_eq!(rank_loss_value(&[0.3, 0.3], &l, 1.0).unwrap(), -0.5);
        let v = rank_loss_value(&[40.0, -40.0], &l, 1.0).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let l = labels(&[1., 2.], &[true, true]);
        assert!(matches!(
            rank_loss_value(&[0., 1.], &l, 1.0),
            Err(SurvivalError::NoComparablePairs)
        ));
    }

    #[test]
    fn rank_loss_approaches_negative_cindex_with_steep_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let l = random_labels(&mut rng, 8, 0.2);
        // risks on a grid with spacing 0.25 so every gap exceeds 0.2
        let mut risks: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        for i in (1..8).rev() {
            let j = rng.random_range(0..=i);
            risks.swap(i, j);
        }
        let c = concordance_index(&risks, &l).unwrap();
        let loss = rank_loss_value(&risks, &l, 50.0).unwrap();
        assert!((loss + c).abs() < 1e-3, "loss {loss} c {c}");
    }

    #[test]
    fn rank_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = random_labels(&mut rng, 8, 0.3);
        let x = Tensor::vector((0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let err = grad_check(|t, r| Ok(rank_loss(t, r, &l, 1.0).unwrap()), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn cox_examples() {
        let l = labels(&[1., 2.], &[false, false]);
        let v = cox_loss_value(&[0.7, 0.7], &l).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
        let l = labels(&[3.], &[false]);
        assert_eq!(cox_loss_value(&[1.3], &l).unwrap(), 0.0);
        let l = labels(&[3., 4.], &[true, true]);
        assert!(matches!(cox_loss_value(&[1., 2.], &l), Err(SurvivalError::NoEvents)));
    }

    #[test]
    fn cox_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut l = random_labels(&mut rng, 6, 0.3);
        l[0] = SurvivalLabel::new(0.05, false).unwrap();
        let x = Tensor::vector((0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let err = grad_check(|t, r| Ok(cox_loss(t, r, &l).unwrap()), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    fn cohort_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalLabel>)> {
        (2usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec((0.1f64..10.0, any::<bool>()), n),
            )
                .prop_map(|(r, l)| {
                    let labels = l
                        .into_iter()
                        .map(|(t, c)| SurvivalLabel::new(t, c).unwrap())
                        .collect();
                    (r, labels)
                })
        })
    }

    proptest! {
        #[test]
        fn pairs_satisfy_definition((_r, l) in cohort_strategy()) {
            let pairs = comparable_pairs(&l);
            let mut seen = std::collections::HashSet::new();
            for &(w, b) in pairs.pairs() {
                prop_assert!(w != b);
                prop_assert!(l[w].event() && l[w].time() < l[b].time());
                prop_assert!(seen.insert((w, b)));
            }
        }

        #[test]
        fn rank_loss_shift_invariant((r, l) in cohort_strategy(), c in -5.0f64..5.0) {
            if let Ok(base) = rank_loss_value(&r, &l, 1.0) {
                let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
                let s = rank_loss_value(&shifted, &l, 1.0).unwrap();
                prop_assert!((base - s).abs() < 1e-12);
            }
        }

        #[test]
        fn cox_loss_shift_invariant((r, l) in cohort_strategy(), c in -5.0f64..5.0) {
            if let Ok(base) = cox_loss_value(&r, &l) {
                let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
                let s = cox_loss_value(&shifted, &l).unwrap();
                prop_assert!((base - s).abs() < 1e-12);
            }
        }

        #[test]
        fn cindex_monotone_invariant_and_reversal((r, l) in cohort_strategy()) {
            if let Ok(c) = concordance_index(&r, &l) {
                prop_assert!((0.0..=1.0).contains(&c));
                let t: Vec<f64> = r.iter().map(|x| x.exp() * 3.0 + x.powi(3)).collect();
                prop_assert_eq!(concordance_index(&t, &l).unwrap(), c);
                let neg: Vec<f64> = r.iter().map(|x| -x).collect();
                prop_assert!((concordance_index(&neg, &l).unwrap() - (1.0 - c)).abs() < 1e-12);
            }
        }
    }
}
