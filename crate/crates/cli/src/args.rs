use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ntd", version, about = "Hierarchical multi-label tagging by neural tree decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic ontology and train/val/test corpora.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus training report.
    Train(TrainArgs),
    /// Tag documents with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients on a small fixture.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelDist {
    Uniform,
    Zipf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    pub branching: usize,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Total documents across all splits.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub docs: u64,
    /// Expected fraction of filler tokens.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub labels_per_doc: usize,
    #[arg(long, default_value_t = 2)]
    pub keywords_per_node: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 100)]
    pub noise_vocab: usize,
    #[arg(long, value_enum, default_value_t = LabelDist::Uniform)]
    pub label_dist: LabelDist,
    #[arg(long, default_value_t = 1.0)]
    pub zipf_exponent: f64,
    /// Relative train,val,test sizes.
    #[arg(long, default_value = "70,15,15")]
    pub split: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Registered model kind.
    #[arg(long, default_value = "ntd")]
    pub model: String,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report path; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub vocab_size: u64,

    /// Loss variant (ntd): stochastic or deterministic.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation decoding threshold (ntd).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Pick the decoding threshold on validation after training (ntd).
    #[arg(long)]
    pub select_threshold: bool,
    #[arg(long)]
    pub max_len: Option<u64>,
    /// Global gradient-norm clip (ntd).
    #[arg(long, conflicts_with = "no_grad_clip")]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub no_grad_clip: bool,
    #[arg(long)]
    pub early_stop_patience: Option<u64>,
    /// Attention variant (ntd): factored or per-node-mlp.
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_s: Option<usize>,
    #[arg(long)]
    pub d_n: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    /// Word vectors, one `token v1 .. vd` per line (ntd).
    #[arg(long)]
    pub word_embeddings: Option<PathBuf>,
    /// Node vectors, one `label v1 .. vd` per line (ntd).
    #[arg(long)]
    pub node_embeddings: Option<PathBuf>,
    /// L2 penalty (flat).
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Decoding threshold; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Refuse to run unless this ontology matches the checkpoint.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 32)]
    pub d_w: usize,
    #[arg(long, default_value_t = 64)]
    pub d_h: usize,
    #[arg(long, default_value_t = 64)]
    pub d_s: usize,
    #[arg(long, default_value_t = 16)]
    pub d_n: usize,
    #[arg(long, default_value_t = 32)]
    pub d_a: usize,
    #[arg(long, default_value = "factored")]
    pub attention: String,
    #[arg(long, default_value = "stochastic")]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Coordinates sampled per parameter array; 0 checks all of them.
    #[arg(long, default_value_t = 64)]
    pub max_coords: usize,
}
