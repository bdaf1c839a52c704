use std::fmt;
use std::str::FromStr;

use super::TrainError;
use crate::mil::parse_kv;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Sigmoid surrogate of the negative concordance index.
    Rank,
    /// Negative Cox partial log-likelihood with minibatch risk sets.
    Cox,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rank => "rank",
            Self::Cox => "cox",
        })
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rank" => Ok(Self::Rank),
            "cox" => Ok(Self::Cox),
            other => Err(TrainError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Temperature of the sigmoid in the ranking loss.
    pub sigmoid_scale: f64,
    /// Apply weight decay to the variance projections as well.
    pub decay_projections: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 30,
            batch_size: 32,
            loss: LossKind::Rank,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            sigmoid_scale: 1.0,
            decay_projections: true,
            seed: 0,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| TrainError::Config(format!("bad value for {key}: {e}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be nonnegative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.sigmoid_scale > 0.0) {
            return bad("adam_eps and sigmoid_scale must be positive");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "loss" => self.loss = value.parse()?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "sigmoid_scale" => self.sigmoid_scale = num(key, value)?,
            "decay_projections" => {
                self.decay_projections = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    other => return Err(TrainError::Config(format!("expected on/off, got `{other}`"))),
                }
            }
            "seed" => self.seed = num(key, value)?,
            other => return Err(TrainError::Config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text).map_err(TrainError::Config)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key=value` lines readable by [`TrainConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let on = if self.decay_projections { "on" } else { "off" };
        format!(
            "lr={:?}\nweight_decay={:?}\nepochs={}\nbatch_size={}\nloss={}\nbeta1={:?}\nbeta2={:?}\n\
             adam_eps={:?}\nsigmoid_scale={:?}\ndecay_projections={on}\nseed={}\n",
            self.lr,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.loss,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.sigmoid_scale,
            self.seed
        )
    }
}
