use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Which MIL aggregator sits in front of the pooling modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    /// Uniform `1/n` weights, nothing learned in the attention slot.
    DeepSets,
    /// Gated attention network.
    AttnMean,
    /// Two k-NN graph convolution layers followed by gated attention.
    DeepGraphConv,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [Self::DeepSets, Self::AttnMean, Self::DeepGraphConv];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeepSets => "deep_sets",
            Self::AttnMean => "attn_mean",
            Self::DeepGraphConv => "deep_graph_conv",
        }
    }

    pub fn has_learned_attention(self) -> bool {
        !matches!(self, Self::DeepSets)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deep_sets" => Ok(Self::DeepSets),
            "attn_mean" => Ok(Self::AttnMean),
            "deep_graph_conv" => Ok(Self::DeepGraphConv),
            other => Err(ModelError::Config(format!("unknown model family `{other}`"))),
        }
    }
}

/// Entrywise nonlinearity applied to the raw variance pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaKind {
    /// `log(eps + x)`
    Log,
    Sqrt,
    Sigmoid,
}

impl EtaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Log => "log",
            Self::Sqrt => "sqrt",
            Self::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for EtaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EtaKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" | "log_eps" => Ok(Self::Log),
            "sqrt" => Ok(Self::Sqrt),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(ModelError::Config(format!("unknown eta `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Instance feature dimension `d`.
    pub input_dim: usize,
    /// Hidden widths of the instance encoder; empty means identity.
    pub encoder_dims: Vec<usize>,
    /// Width of the gated attention network.
    pub attn_hidden: usize,
    /// Number of variance projections `K`.
    pub n_projections: usize,
    pub eta: EtaKind,
    pub eta_eps: f64,
    pub family: ModelFamily,
    pub varpool: bool,
    /// Mean and variance branches share one attention network.
    pub shared_attention: bool,
    /// Hidden widths of the prediction head; the output is always a scalar.
    pub head_dims: Vec<usize>,
    pub gcn_k_neighbors: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            encoder_dims: vec![512],
            attn_hidden: 256,
            n_projections: 10,
            eta: EtaKind::Log,
            eta_eps: 0.01,
            family: ModelFamily::AttnMean,
            varpool: true,
            shared_attention: true,
            head_dims: vec![256],
            gcn_k_neighbors: 8,
            seed: 0,
        }
    }
}

fn parse_dims(value: &str) -> Result<Vec<usize>, ModelError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| ModelError::Config(format!("bad width `{s}`: {e}")))
        })
        .collect()
}

fn format_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(value: &str) -> Result<bool, ModelError> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(ModelError::Config(format!("expected on/off, got `{other}`"))),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ModelError::Config(format!("bad value for {key}: {e}")))
}

impl ModelConfig {
    /// Width `e` of the encoded instances.
    pub fn embed_dim(&self) -> usize {
        self.encoder_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Input width of the prediction head.
    pub fn pooled_dim(&self) -> usize {
        self.embed_dim() + if self.varpool { self.n_projections } else { 0 }
    }

    /// Whether a second attention network drives the variance branch.
    pub fn separate_var_attention(&self) -> bool {
        self.varpool && !self.shared_attention && self.family.has_learned_attention()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.encoder_dims.iter().chain(&self.head_dims).any(|&w| w == 0) {
            return bad("layer widths must be positive");
        }
        if self.family.has_learned_attention() && self.attn_hidden == 0 {
            return bad("attn_hidden must be positive");
        }
        if self.varpool && self.n_projections == 0 {
            return bad("n_projections must be at least 1 with varpool enabled");
        }
        if self.eta == EtaKind::Log && !(self.eta_eps > 0.0 && self.eta_eps.is_finite()) {
            return bad("eta_eps must be positive for the log nonlinearity");
        }
        if self.family == ModelFamily::DeepGraphConv && self.gcn_k_neighbors == 0 {
            return bad("gcn_k_neighbors must be at least 1");
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        match key {
            "input_dim" => self.input_dim = parse_num(key, value)?,
            "encoder_dims" => self.encoder_dims = parse_dims(value)?,
            "attn_hidden" => self.attn_hidden = parse_num(key, value)?,
            "n_projections" | "k_projections" => self.n_projections = parse_num(key, value)?,
            "eta" => self.eta = value.parse()?,
            "eta_eps" => self.eta_eps = parse_num(key, value)?,
            "family" | "model" => self.family = value.parse()?,
            "varpool" => self.varpool = parse_bool(value)?,
            "shared_attention" => self.shared_attention = parse_bool(value)?,
            "head_dims" => self.head_dims = parse_dims(value)?,
            "gcn_k_neighbors" => self.gcn_k_neighbors = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(ModelError::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        vec![
            ("input_dim", self.input_dim.to_string()),
            ("encoder_dims", format_dims(&self.encoder_dims)),
            ("attn_hidden", self.attn_hidden.to_string()),
            ("n_projections", self.n_projections.to_string()),
            ("eta", self.eta.to_string()),
            ("eta_eps", format!("{:?}", self.eta_eps)),
            ("family", self.family.to_string()),
            ("varpool", on(self.varpool)),
            ("shared_attention", on(self.shared_attention)),
            ("head_dims", format_dims(&self.head_dims)),
            ("gcn_k_neighbors", self.gcn_k_neighbors.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Serialises to `key=value` lines, readable by [`ModelConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text).map_err(ModelError::Config)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits flat `key=value` text into pairs; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
