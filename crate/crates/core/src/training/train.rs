use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::init::init_params;
use super::{LossKind, TrainConfig, TrainError};
use crate::autodiff::Tape;
use crate::data::{bag_cap, batch_bags, Cohort, Split};
use crate::mil::{MilModel, ModelConfig};
use crate::survival::{concordance_index, cox_loss, rank_loss, SurvivalError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the batches that were not skipped.
    pub mean_loss: f64,
    pub batches: usize,
    /// Batches without comparable pairs (rank) or events (Cox).
    pub skipped: usize,
    /// c-index on the full training bags after the epoch, if defined.
    pub train_cindex: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub n_cap: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Risks of full, unpadded bags. Bags are independent, so they are scored
/// in parallel; the result does not depend on thread scheduling.
pub fn predict_risks(model: &MilModel, cohort: &Cohort, indices: &[usize]) -> Result<Vec<f64>, TrainError> {
    indices
        .par_iter()
        .map(|&i| Ok(model.risk(&cohort.patients()[i].bag.features)?))
        .collect()
}

/// c-index of `model` on the given patients using full bags.
pub fn evaluate(model: &MilModel, cohort: &Cohort, indices: &[usize]) -> Result<f64, TrainError> {
    let risks = predict_risks(model, cohort, indices)?;
    Ok(concordance_index(&risks, &cohort.labels_of(indices))?)
}

/// Minibatch training on `train_idx`.
///
/// Parameters come from `model_cfg.seed`; shuffling and bag subsampling in
/// epoch `e` use stream `e` of a ChaCha generator seeded with
/// `train_cfg.seed`, so a run is reproducible bit for bit.
pub fn train(
    cohort: &Cohort,
    train_idx: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(MilModel, TrainHistory), TrainError> {
    train_cfg.validate()?;
    if train_idx.len() < 2 {
        return Err(TrainError::Config("training needs at least 2 patients".into()));
    }
    if model_cfg.input_dim != cohort.dim() {
        return Err(TrainError::Config(format!(
            "model input_dim {} but cohort features have dimension {}",
            model_cfg.input_dim,
            cohort.dim()
        )));
    }
    let params = init_params(model_cfg, model_cfg.seed)?;
    let mut model = MilModel::new(model_cfg.clone(), params)?;
    let sizes: Vec<usize> = train_idx.iter().map(|&i| cohort.patients()[i].bag.len()).collect();
    let n_cap = bag_cap(&sizes)?;
    let adam = AdamConfig {
        lr: train_cfg.lr,
        beta1: train_cfg.beta1,
        beta2: train_cfg.beta2,
        eps: train_cfg.adam_eps,
        weight_decay: train_cfg.weight_decay,
    };
    let mut state = AdamState::new(model.params());
    if !train_cfg.decay_projections {
        state.exempt_from_decay(model.params(), "projections");
    }

    let mut history = TrainHistory {
        n_cap,
        epochs: Vec::with_capacity(train_cfg.epochs),
    };
    for epoch in 0..train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);

        let (mut loss_sum, mut batches, mut skipped) = (0.0, 0, 0);
        for chunk in order.chunks(train_cfg.batch_size) {
            batches += 1;
            let batch = batch_bags(cohort, chunk, n_cap, &mut rng)?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true)?;
            let mut risks = Vec::with_capacity(batch.bags.len());
            for bag in &batch.bags {
                risks.push(model.forward_on_tape(&mut tape, &vars, &bag.features, &bag.mask)?.risk);
            }
            let risks = tape.concat(&risks)?;
            let loss = match train_cfg.loss {
                LossKind::Rank => rank_loss(&mut tape, risks, &batch.labels, train_cfg.sigmoid_scale),
                LossKind::Cox => cox_loss(&mut tape, risks, &batch.labels),
            };
            let loss = match loss {
                Ok(l) => l,
                Err(SurvivalError::NoComparablePairs | SurvivalError::NoEvents) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += tape.value(loss).item();
            tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.all.iter().map(|&v| tape.grad_tensor(v)).collect();
            adam_step(model.params_mut(), &grads, &mut state, &adam)?;
        }
        if skipped == batches {
            return Err(TrainError::AllBatchesSkipped { epoch, batches });
        }
        if skipped > 0 {
            debug!("epoch {epoch}: skipped {skipped} of {batches} batches");
        }
        let train_cindex = match evaluate(&model, cohort, train_idx) {
            Ok(c) => Some(c),
            Err(TrainError::Survival(SurvivalError::NoComparablePairs)) => None,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / (batches - skipped) as f64,
            batches,
            skipped,
            train_cindex,
        };
        debug!(
            "epoch {epoch}: loss {:.5}, train c-index {:?}",
            record.mean_loss, record.train_cindex
        );
        history.epochs.push(record);
    }
    Ok((model, history))
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_cindex: f64,
    pub test_cindex: f64,
    pub history: TrainHistory,
    pub model: MilModel,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    pub fn test_scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_cindex).collect()
    }

    pub fn train_scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.train_cindex).collect()
    }

    /// Mean and sample standard deviation of the test c-index, both ×100.
    pub fn test_summary(&self) -> (f64, f64) {
        let (m, s) = mean_std(&self.test_scores());
        (100.0 * m, 100.0 * s)
    }
}

/// Mean and sample (n - 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_fold(
    cohort: &Cohort,
    fold: usize,
    split: &Split,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    let mut mc = model_cfg.clone();
    mc.seed = model_cfg.seed.wrapping_add(fold as u64);
    let mut tc = train_cfg.clone();
    tc.seed = train_cfg.seed.wrapping_add(fold as u64);
    let (model, history) = train(cohort, &split.train, &mc, &tc)?;
    let train_cindex = evaluate(&model, cohort, &split.train)?;
    let test_cindex = evaluate(&model, cohort, &split.test)?;
    info!("fold {fold}: train c-index {train_cindex:.4}, test c-index {test_cindex:.4}");
    Ok(FoldResult {
        fold,
        train_cindex,
        test_cindex,
        history,
        model,
    })
}

/// Trains and evaluates one model per split. Fold `i` offsets both seeds by
/// `i`. With `parallel`, folds run concurrently; results are identical to a
/// sequential run.
pub fn cross_validate(
    cohort: &Cohort,
    splits: &[Split],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    parallel: bool,
) -> Result<CvReport, TrainError> {
    let folds: Vec<FoldResult> = if parallel {
        splits
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_fold(cohort, i, s, model_cfg, train_cfg))
            .collect::<Result<_, _>>()?
    } else {
        splits
            .iter()
            .enumerate()
            .map(|(i, s)| run_fold(cohort, i, s, model_cfg, train_cfg))
            .collect::<Result<_, _>>()?
    };
    Ok(CvReport { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{resample_splits, synth_generate, SynthParams};
    use crate::mil::ModelFamily;

    fn small() -> (Cohort, ModelConfig, TrainConfig) {
        let synth = synth_generate(&SynthParams {
            n_patients: 40,
            n_min: 4,
            n_max: 10,
            dim: 4,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let mc = ModelConfig {
            input_dim: 4,
            encoder_dims: vec![],
            attn_hidden: 4,
            n_projections: 2,
            head_dims: vec![],
            family: ModelFamily::AttnMean,
            ..Default::default()
        };
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            ..Default::default()
        };
        (synth.cohort, mc, tc)
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn training_is_deterministic() {
        let (cohort, mc, tc) = small();
        let idx: Vec<usize> = (0..30).collect();
        let (a, ha) = train(&cohort, &idx, &mc, &tc).unwrap();
        let (b, hb) = train(&cohort, &idx, &mc, &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 2);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let (cohort, mc, mut tc) = small();
        tc.lr = 0.0;
        let idx: Vec<usize> = (0..30).collect();
        let (m, _) = train(&cohort, &idx, &mc, &tc).unwrap();
        assert_eq!(m.params(), &init_params(&mc, mc.seed).unwrap());
    }

    #[test]
    fn all_censored_cohort_aborts() {
        let synth = synth_generate(&SynthParams {
            n_patients: 10,
            n_min: 2,
            n_max: 3,
            dim: 2,
            ..Default::default()
        })
        .unwrap();
        let patients = synth
            .cohort
            .patients()
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.label = crate::survival::SurvivalLabel::new(p.label.time(), true).unwrap();
                p
            })
            .collect();
        let cohort = Cohort::new(patients).unwrap();
        let mc = ModelConfig {
            input_dim: 2,
            encoder_dims: vec![],
            attn_hidden: 2,
            n_projections: 1,
            head_dims: vec![],
            ..Default::default()
        };
        let idx: Vec<usize> = (0..10).collect();
        for loss in [LossKind::Rank, LossKind::Cox] {
            let tc = TrainConfig {
                epochs: 1,
                batch_size: 4,
                loss,
                ..Default::default()
            };
            let err = train(&cohort, &idx, &mc, &tc).unwrap_err();
            assert!(matches!(err, TrainError::AllBatchesSkipped { epoch: 0, batches: 3 }));
        }
    }

    #[test]
    fn parallel_folds_match_sequential() {
        let (cohort, mc, tc) = small();
        let splits = resample_splits(cohort.len(), 0.7, 3, 1).unwrap();
        let seq = cross_validate(&cohort, &splits, &mc, &tc, false).unwrap();
        let par = cross_validate(&cohort, &splits, &mc, &tc, true).unwrap();
        assert_eq!(seq.test_scores(), par.test_scores());
        assert_eq!(seq.train_scores(), par.train_scores());
        for f in &seq.folds {
            assert!((0.0..=1.0).contains(&f.test_cindex));
        }
    }
}
