//! Finite-difference check of full-model loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, LossKind, TrainError};
use crate::autodiff::{Tape, Var};
use crate::gradcheck::{central_differences, max_relative_error};
use crate::mil::{MilModel, ModelConfig, ModelFamily, ModelVars};
use crate::reference::{reference_cox_loss, reference_rank_loss, reference_risk, DoubleDouble, Real};
use crate::survival::{cox_loss, rank_loss, SurvivalLabel};
use crate::tensor::Tensor;

/// Finite-difference step used by the suite.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub family: ModelFamily,
    pub varpool: bool,
    pub shared_attention: bool,
    pub loss: LossKind,
    pub n_params: usize,
    pub max_rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }

    pub fn label(&self) -> String {
        format!(
            "{} varpool={} attention={} loss={}",
            self.family,
            if self.varpool { "on" } else { "off" },
            if self.shared_attention { "shared" } else { "separate" },
            self.loss
        )
    }
}

/// Loss of `model` on full bags in double-double arithmetic.
fn reference_loss(
    model: &MilModel,
    bags: &[Tensor],
    labels: &[SurvivalLabel],
    loss: LossKind,
) -> Result<DoubleDouble, TrainError> {
    let risks = bags
        .iter()
        .map(|b| reference_risk::<DoubleDouble>(model, b, &vec![true; b.rows()]))
        .collect::<Result<Vec<_>, _>>()?;
    let value = match loss {
        LossKind::Rank => reference_rank_loss(&risks, labels, 1.0),
        LossKind::Cox => reference_cox_loss(&risks, labels),
    };
    value.ok_or_else(|| TrainError::Config("gradient check batch has no comparable pairs or events".into()))
}

fn batch_loss(
    model: &MilModel,
    tape: &mut Tape,
    vars: &ModelVars,
    bags: &[Tensor],
    labels: &[SurvivalLabel],
    loss: LossKind,
) -> Result<Var, TrainError> {
    let mut risks = Vec::with_capacity(bags.len());
    for bag in bags {
        let mask = vec![true; bag.rows()];
        risks.push(model.forward_on_tape(tape, vars, bag, &mask)?.risk);
    }
    let risks = tape.concat(&risks)?;
    Ok(match loss {
        LossKind::Rank => rank_loss(tape, risks, labels, 1.0)?,
        LossKind::Cox => cox_loss(tape, risks, labels)?,
    })
}

/// Checks one configuration on six random patients with bags of 3 to 16
/// instances in dimension 6.
pub fn check_model_gradient(
    family: ModelFamily,
    varpool: bool,
    shared_attention: bool,
    loss: LossKind,
    seed: u64,
) -> Result<GradCase, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let config = ModelConfig {
        input_dim: d,
        encoder_dims: vec![8],
        attn_hidden: 4,
        n_projections: 3,
        head_dims: vec![4],
        family,
        varpool,
        shared_attention,
        gcn_k_neighbors: 3,
        seed,
        ..Default::default()
    };
    let mut model = MilModel::new(config.clone(), init_params(&config, seed)?)?;
    let bags: Vec<Tensor> = (0..6)
        .map(|_| {
            let n = rng.random_range(3..=16);
            Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())
        })
        .collect::<Result<_, _>>()?;
    // distinct times, first patient always an event, so both losses are defined
    let labels: Vec<SurvivalLabel> = (0..6)
        .map(|i| SurvivalLabel::new(1.0 + i as f64 + rng.random_range(0.0..0.5), i > 0 && rng.random_bool(0.3)))
        .collect::<Result<_, _>>()?;

    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true)?;
    let out = batch_loss(&model, &mut tape, &vars, &bags, &labels, loss)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = vars
        .all
        .iter()
        .flat_map(|&v| tape.grad_tensor(v).into_data())
        .collect();

    // The numeric side evaluates an independent forward pass in
    // double-double precision; see `reference` for why f64 is not enough.
    // Differences are taken against the unperturbed loss before rounding to
    // f64, otherwise the final rounding alone costs ~1e-11 after dividing by 2h.
    let x = model.params().flatten();
    let base = reference_loss(&model, &bags, &labels, loss)?;
    let mut failure = None;
    let numeric = central_differences(
        |probe| {
            model.params_mut().assign_flat(probe);
            match reference_loss(&model, &bags, &labels, loss) {
                Ok(v) => Ok((v - base).to_f64()),
                Err(e) => {
                    failure = Some(e.to_string());
                    Err(crate::tensor::TensorError::NonFinite { op: "reference" })
                }
            }
        },
        &x,
        GRADCHECK_STEP,
    );
    model.params_mut().assign_flat(&x);
    let numeric = match (numeric, failure) {
        (Ok(n), _) => n,
        (Err(_), Some(msg)) => return Err(TrainError::Config(format!("gradient check forward failed: {msg}"))),
        (Err(e), None) => return Err(e.into()),
    };
    Ok(GradCase {
        family,
        varpool,
        shared_attention,
        loss,
        n_params: x.len(),
        max_rel_error: max_relative_error(&analytic, &numeric),
    })
}

/// Every family × variance branch on/off × {rank, cox}, plus the
/// separate-attention variant of each family with the variance branch.
pub fn model_gradient_suite(seed: u64) -> Result<Vec<GradCase>, TrainError> {
    let mut cases = Vec::new();
    for (i, family) in ModelFamily::ALL.into_iter().enumerate() {
        for varpool in [false, true] {
            for loss in [LossKind::Rank, LossKind::Cox] {
                cases.push(check_model_gradient(family, varpool, true, loss, seed + i as u64)?);
            }
        }
        if family.has_learned_attention() {
            cases.push(check_model_gradient(family, true, false, LossKind::Rank, seed + i as u64)?);
        }
    }
    Ok(cases)
}
