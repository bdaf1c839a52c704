use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "varpool", version, about = "Variance-pooling multiple-instance survival models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a planted-variance cohort as bag files plus a manifest.
    Synth(SynthCmd),
    /// Train over resampled train/test splits and write checkpoints and metrics.
    Train(TrainCmd),
    /// Score a checkpoint on a cohort.
    Eval(EvalCmd),
    /// Export attention rankings and SAsqR tables for every patient.
    Interpret(InterpretCmd),
    /// Compare autodiff gradients against finite differences for every model variant.
    Gradcheck(GradcheckCmd),
}

#[derive(Args, Debug, Clone)]
pub struct GeneratorArgs {
    /// Number of patients to generate.
    #[arg(long, default_value_t = 500)]
    pub patients: usize,
    /// Instance feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Strength of the planted variance signal.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Fraction of censored patients.
    #[arg(long, default_value_t = 0.2)]
    pub censor_rate: f64,
    /// Smallest bag size.
    #[arg(long, default_value_t = 32)]
    pub min_instances: usize,
    /// Largest bag size.
    #[arg(long, default_value_t = 96)]
    pub max_instances: usize,
}

/// Where patients come from: a manifest on disk, or a cohort generated in memory.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Manifest CSV with columns patient_id,path,time,censored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Generate the cohort in memory from the generator flags instead.
    #[arg(long)]
    pub synth: bool,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    /// Output directory for manifest.csv and bags/.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

/// Model and training settings. Each flag overrides the same key from
/// `--config`, which in turn overrides the built-in default.
#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Flat key=value file of model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model family.
    #[arg(long, default_value = "attn_mean", value_parser = ["deep_sets", "attn_mean", "deep_graph_conv"])]
    pub model: String,
    /// Variance pooling branch.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    pub varpool: String,
    /// Survival loss.
    #[arg(long, default_value = "rank", value_parser = ["rank", "cox"])]
    pub loss: String,
    /// Training epochs per split.
    #[arg(long, default_value = "30")]
    pub epochs: String,
    /// Patients per minibatch.
    #[arg(long, default_value = "32")]
    pub batch_size: String,
    /// Adam learning rate.
    #[arg(long, default_value = "0.0002")]
    pub lr: String,
    /// Decoupled weight decay.
    #[arg(long, default_value = "0.00001")]
    pub weight_decay: String,
    /// Number of variance projections K.
    #[arg(long, default_value = "10")]
    pub k_projections: String,
    /// Nonlinearity applied to the variance pool.
    #[arg(long, default_value = "log", value_parser = ["log", "sqrt", "sigmoid"])]
    pub eta: String,
    /// Offset inside the log nonlinearity.
    #[arg(long, default_value = "0.01")]
    pub eta_eps: String,
    /// Encoder layer widths, comma separated; empty for the identity encoder.
    #[arg(long, default_value = "512")]
    pub encoder_dims: String,
    /// Hidden width of the gated attention.
    #[arg(long, default_value = "256")]
    pub attn_hidden: String,
    /// Hidden widths of the prediction head, comma separated.
    #[arg(long, default_value = "256")]
    pub head_dims: String,
    /// Neighbours per instance in the graph-convolution family.
    #[arg(long, default_value = "8")]
    pub gcn_k_neighbors: String,
    /// Variance attention shares the mean attention weights.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    pub shared_attention: String,
}

/// Flag ids of [`ConfigArgs`] paired with the configuration key they set.
pub const CONFIG_FLAGS: [(&str, &str); 15] = [
    ("model", "family"),
    ("varpool", "varpool"),
    ("loss", "loss"),
    ("epochs", "epochs"),
    ("batch_size", "batch_size"),
    ("lr", "lr"),
    ("weight_decay", "weight_decay"),
    ("k_projections", "n_projections"),
    ("eta", "eta"),
    ("eta_eps", "eta_eps"),
    ("encoder_dims", "encoder_dims"),
    ("attn_hidden", "attn_hidden"),
    ("head_dims", "head_dims"),
    ("gcn_k_neighbors", "gcn_k_neighbors"),
    ("shared_attention", "shared_attention"),
];

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for data generation, splits, initialisation and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of resampled train/test splits.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Fraction of patients used for training in each split.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Train the splits on worker threads.
    #[arg(long)]
    pub parallel_folds: bool,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional CSV of per-patient risks.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator seed when `--synth` is used.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InterpretCmd {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for the report CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed when `--synth` is used.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Highest-attention instances listed per patient.
    #[arg(long, default_value_t = 10)]
    pub top_m: usize,
    /// Instances sampled around each SAsqR quantile.
    #[arg(long, default_value_t = 3)]
    pub per_bucket: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckCmd {
    /// Seed for the random bags and parameters.
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}
