use std::collections::HashMap;

use super::gcn::{gcn_layer, knn_graph};
use super::pool::{eta, mean_pool, variance_pool};
use super::{ModelConfig, ModelError, ModelFamily, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Dense weight with the given fan-in.
    Weight { fan_in: usize },
    Bias,
    /// Variance projection matrix, e×K.
    Projection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

fn dense(specs: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![fan_in, fan_out],
        role: ParamRole::Weight { fan_in },
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![fan_out],
        role: ParamRole::Bias,
    });
}

fn gated_attention(specs: &mut Vec<ParamSpec>, prefix: &str, e: usize, hidden: usize) {
    dense(specs, &format!("{prefix}.tanh"), e, hidden);
    dense(specs, &format!("{prefix}.gate"), e, hidden);
    dense(specs, &format!("{prefix}.score"), hidden, 1);
}

/// Names, shapes and roles of every parameter the configuration needs, in
/// store order.
pub fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut width = config.input_dim;
    for (i, &w) in config.encoder_dims.iter().enumerate() {
        dense(&mut specs, &format!("encoder.{i}"), width, w);
        width = w;
    }
    let e = width;
    if config.family == ModelFamily::DeepGraphConv {
        for i in 0..2 {
            specs.push(ParamSpec {
                name: format!("gcn.{i}.weight"),
                shape: vec![e, e],
                role: ParamRole::Weight { fan_in: e },
            });
        }
    }
    if config.family.has_learned_attention() {
        gated_attention(&mut specs, "attention", e, config.attn_hidden);
        if config.separate_var_attention() {
            gated_attention(&mut specs, "var_attention", e, config.attn_hidden);
        }
    }
    if config.varpool {
        specs.push(ParamSpec {
            name: "projections".into(),
            shape: vec![e, config.n_projections],
            role: ParamRole::Projection,
        });
    }
    let mut width = config.pooled_dim();
    for (i, &w) in config.head_dims.iter().enumerate() {
        dense(&mut specs, &format!("head.{i}"), width, w);
        width = w;
    }
    dense(&mut specs, &format!("head.{}", config.head_dims.len()), width, 1);
    specs
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: Var,
    bias: Var,
}

#[derive(Clone, Copy, Debug)]
struct GatedAttention {
    tanh: Dense,
    gate: Dense,
    score: Dense,
}

/// Model parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    /// Every parameter leaf, in store order.
    pub all: Vec<Var>,
    encoder: Vec<Dense>,
    gcn: Vec<Var>,
    attention: Option<GatedAttention>,
    var_attention: Option<GatedAttention>,
    projections: Option<Var>,
    head: Vec<Dense>,
}

/// Tape handles for every intermediate of one bag's forward pass.
#[derive(Clone, Debug)]
pub struct BagTrace {
    /// Encoded (and, for graph models, convolved) instances, n×e.
    pub embeddings: Var,
    pub attention: Var,
    /// Variance-branch attention; equals `attention` when shared.
    pub var_attention: Var,
    pub p_mean: Var,
    pub p_var_raw: Option<Var>,
    pub p_cat: Var,
    pub risk: Var,
}

/// Forward-pass record for one bag.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolOutputs {
    pub attention: Vec<f64>,
    /// Present only when the variance branch has its own attention network.
    pub var_attention: Option<Vec<f64>>,
    pub p_mean: Vec<f64>,
    /// Absent when variance pooling is disabled.
    pub p_var_raw: Option<Vec<f64>>,
    pub p_cat: Vec<f64>,
    /// Higher means worse predicted survival.
    pub risk: f64,
}

/// [`PoolOutputs`] plus the quantities interpretability needs.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub outputs: PoolOutputs,
    pub embeddings: Tensor,
    pub projections: Option<Tensor>,
}

impl Inspection {
    /// Attention weights driving the variance branch.
    pub fn variance_attention(&self) -> &[f64] {
        self.outputs
            .var_attention
            .as_deref()
            .unwrap_or(&self.outputs.attention)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilModel {
    config: ModelConfig,
    params: ParamStore,
}

impl MilModel {
    /// Pairs a configuration with parameters, checking names and shapes
    /// against [`param_layout`].
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(ModelError::Param {
                name: "<store>".into(),
                problem: format!("expected {} tensors, found {}", layout.len(), params.len()),
            });
        }
        for (i, spec) in layout.iter().enumerate() {
            if params.name(i) != spec.name {
                return Err(ModelError::Param {
                    name: params.name(i).to_string(),
                    problem: format!("found where `{}` was expected", spec.name),
                });
            }
            if params.tensor(i).shape() != spec.shape.as_slice() {
                return Err(ModelError::Param {
                    name: spec.name.clone(),
                    problem: format!(
                        "has shape {:?}, expected {:?}",
                        params.tensor(i).shape(),
                        spec.shape
                    ),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Places the parameters on `tape`, as differentiable leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars, ModelError> {
        let mut all = Vec::with_capacity(self.params.len());
        let mut by_name = HashMap::with_capacity(self.params.len());
        for (name, tensor) in self.params.iter() {
            let v = if trainable {
                tape.param(tensor.clone())?
            } else {
                tape.constant(tensor.clone())?
            };
            all.push(v);
            by_name.insert(name.to_string(), v);
        }
        let get = |name: String| -> Result<Var, ModelError> {
            by_name.get(&name).copied().ok_or(ModelError::Param {
                name,
                problem: "is missing".into(),
            })
        };
        let dense = |prefix: String| -> Result<Dense, ModelError> {
            Ok(Dense {
                weight: get(format!("{prefix}.weight"))?,
                bias: get(format!("{prefix}.bias"))?,
            })
        };
        let gated = |prefix: &str| -> Result<GatedAttention, ModelError> {
            Ok(GatedAttention {
                tanh: dense(format!("{prefix}.tanh"))?,
                gate: dense(format!("{prefix}.gate"))?,
                score: dense(format!("{prefix}.score"))?,
            })
        };
        let cfg = &self.config;
        let encoder = (0..cfg.encoder_dims.len())
            .map(|i| dense(format!("encoder.{i}")))
            .collect::<Result<_, _>>()?;
        let gcn = if cfg.family == ModelFamily::DeepGraphConv {
            (0..2).map(|i| get(format!("gcn.{i}.weight"))).collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let attention = cfg
            .family
            .has_learned_attention()
            .then(|| gated("attention"))
            .transpose()?;
        let var_attention = cfg
            .separate_var_attention()
            .then(|| gated("var_attention"))
            .transpose()?;
        let projections = cfg.varpool.then(|| get("projections".into())).transpose()?;
        let head = (0..=cfg.head_dims.len())
            .map(|i| dense(format!("head.{i}")))
            .collect::<Result<_, _>>()?;
        Ok(ModelVars {
            all,
            encoder,
            gcn,
            attention,
            var_attention,
            projections,
            head,
        })
    }

    fn check_bag(&self, features: &Tensor, mask: &[bool]) -> Result<(), ModelError> {
        if features.ndim() != 2 || features.cols() != self.config.input_dim {
            return Err(ModelError::Dimension {
                expected: self.config.input_dim,
                got: features.cols(),
            });
        }
        if mask.len() != features.rows() {
            return Err(ModelError::Mask {
                mask: mask.len(),
                rows: features.rows(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyBag);
        }
        Ok(())
    }

    /// Records the full pipeline for one (possibly padded) bag on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        features: &Tensor,
        mask: &[bool],
    ) -> Result<BagTrace, ModelError> {
        self.check_bag(features, mask)?;
        let cfg = &self.config;
        let x = tape.constant(features.clone())?;

        let mut h = x;
        for layer in &vars.encoder {
            let lin = tape.matmul(h, layer.weight)?;
            let lin = tape.add_row(lin, layer.bias)?;
            h = tape.relu(lin)?;
        }
        if !vars.gcn.is_empty() {
            let neighbors = knn_graph(features, mask, cfg.gcn_k_neighbors)?;
            for &w in &vars.gcn {
                h = gcn_layer(tape, h, &neighbors, w)?;
            }
        }

        let attention = match &vars.attention {
            Some(net) => gated_scores(tape, h, net, mask)?,
            None => uniform_weights(tape, mask)?,
        };
        let p_mean = mean_pool(tape, h, attention)?;

        let (var_attention, p_var_raw, p_cat) = match vars.projections {
            Some(v) => {
                let a_var = match &vars.var_attention {
                    Some(net) => gated_scores(tape, h, net, mask)?,
                    None => attention,
                };
                let p_var = variance_pool(tape, h, a_var, v)?;
                let p_eta = eta(tape, p_var, cfg.eta, cfg.eta_eps)?;
                let p_cat = tape.concat(&[p_mean, p_eta])?;
                (a_var, Some(p_var), p_cat)
            }
            None => (attention, None, p_mean),
        };

        let width = tape.value(p_cat).len();
        let mut z = tape.reshape(p_cat, vec![1, width])?;
        let last = vars.head.len() - 1;
        for (i, layer) in vars.head.iter().enumerate() {
            let lin = tape.matmul(z, layer.weight)?;
            z = tape.add_row(lin, layer.bias)?;
            if i < last {
                z = tape.relu(z)?;
            }
        }
        let risk = tape.reshape(z, vec![])?;

        Ok(BagTrace {
            embeddings: h,
            attention,
            var_attention,
            p_mean,
            p_var_raw,
            p_cat,
            risk,
        })
    }

    /// Full forward pass and the intermediates used for interpretation.
    pub fn inspect(&self, features: &Tensor, mask: &[bool]) -> Result<Inspection, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let trace = self.forward_on_tape(&mut tape, &vars, features, mask)?;
        let data = |v: Var| tape.value(v).data().to_vec();
        let outputs = PoolOutputs {
            attention: data(trace.attention),
            var_attention: self.config.separate_var_attention().then(|| data(trace.var_attention)),
            p_mean: data(trace.p_mean),
            p_var_raw: trace.p_var_raw.map(data),
            p_cat: data(trace.p_cat),
            risk: tape.value(trace.risk).item(),
        };
        Ok(Inspection {
            outputs,
            embeddings: tape.value(trace.embeddings).clone(),
            projections: self.params.get("projections").cloned(),
        })
    }

    pub fn forward(&self, features: &Tensor, mask: &[bool]) -> Result<PoolOutputs, ModelError> {
        Ok(self.inspect(features, mask)?.outputs)
    }

    /// Risk of a full, unpadded bag.
    pub fn risk(&self, features: &Tensor) -> Result<f64, ModelError> {
        let mask = vec![true; features.rows()];
        Ok(self.forward(features, &mask)?.risk)
    }
}

fn gated_scores(tape: &mut Tape, h: Var, net: &GatedAttention, mask: &[bool]) -> Result<Var, ModelError> {
    let t = tape.matmul(h, net.tanh.weight)?;
    let t = tape.add_row(t, net.tanh.bias)?;
    let t = tape.tanh(t)?;
    let s = tape.matmul(h, net.gate.weight)?;
    let s = tape.add_row(s, net.gate.bias)?;
    let s = tape.sigmoid(s)?;
    let gated = tape.mul(t, s)?;
    let scores = tape.matmul(gated, net.score.weight)?;
    let scores = tape.add_row(scores, net.score.bias)?;
    let n = mask.len();
    let scores = tape.reshape(scores, vec![n])?;
    Ok(tape.softmax_masked(scores, mask)?)
}

fn uniform_weights(tape: &mut Tape, mask: &[bool]) -> Result<Var, ModelError> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(ModelError::EmptyBag);
    }
    let w = 1.0 / valid as f64;
    let data = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
    Ok(tape.constant(Tensor::vector(data)?)?)
}
