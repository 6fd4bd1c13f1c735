use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Handcrafted, HeadKind};

#[derive(Debug, Parser)]
#[command(name = "protext", version = crate::VERSION, about = "Learn text-encoder prompts from text-only supervision")]
pub struct Cli {
    /// JSON run config, or a run manifest to replay.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Root seed for training, sweeps and synthetic worlds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    pub log_level: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a prompt dataset from LLM completions, fixtures or handcrafted templates.
    Curate(CurateArgs),
    /// Train prompt vectors (or an output adapter) on a prompt dataset.
    Train(TrainArgs),
    /// Zero-shot classification of precomputed image features.
    Eval(EvalArgs),
    /// Cartesian sweep over training settings on the synthetic world.
    Ablate(AblateArgs),
    /// Nearest vocabulary words to each learned prompt vector.
    Inspect(InspectArgs),
    /// End-to-end base-to-novel run on a seeded synthetic world.
    Synthetic(SyntheticArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Curate(_) => "curate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Inspect(_) => "inspect",
            Command::Synthetic(_) => "synthetic",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct EncoderPaths {
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Encoder weights manifest (`.json` with a `.bin` blob beside it).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct CurateArgs {
    /// Class list: one name per line, or JSON (names or class records).
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// Query templates, one per line, each containing `{CLS}`.
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    /// Use only the first N queries.
    #[arg(long, value_name = "N")]
    pub num_queries: Option<usize>,
    /// Completions requested per query (M).
    #[arg(long, value_name = "M")]
    pub per_query: Option<usize>,
    /// Read completions from `DIR/<class_id>/<query_id>.txt` instead of an LLM.
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
    /// Use a handcrafted template set instead of generated descriptions.
    #[arg(long, value_enum)]
    pub handcrafted: Option<Handcrafted>,
    /// Input template; must contain `{CLS}`.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdapterArg {
    Linear,
    Mlp,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// Prompt vectors per layer (T).
    #[arg(long, value_name = "T")]
    pub prompt_length: Option<usize>,
    /// Number of prompted layers (J).
    #[arg(long, value_name = "J")]
    pub prompt_depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long, value_parser = ["mse", "l1", "contrastive"])]
    pub loss: Option<String>,
    #[arg(long, value_parser = ["per-sample", "ensembled"])]
    pub target: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// InfoNCE temperature for the contrastive loss.
    #[arg(long)]
    pub loss_temperature: Option<f64>,
    /// Text whose embeddings initialize the first prompt layer.
    #[arg(long, conflicts_with = "random_init")]
    pub init_text: Option<String>,
    /// Initialize every prompt layer randomly.
    #[arg(long)]
    pub random_init: bool,
    /// Match raw projected features instead of unit-norm ones.
    #[arg(long)]
    pub raw_features: bool,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub encoder: EncoderPaths,
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Train an output adapter instead of prompts.
    #[arg(long, value_enum)]
    pub adapter: Option<AdapterArg>,
    #[arg(long)]
    pub adapter_alpha: Option<f64>,
    #[arg(long)]
    pub adapter_reduction: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub encoder: EncoderPaths,
    /// Image features (container `.json` or `.jsonl`).
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub head: Option<HeadKind>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub adapter: Option<PathBuf>,
    /// Prompt dataset; required by the ensembled head, supplies concept suffixes otherwise.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Logit scale applied to cosine similarities.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct WorldFlags {
    /// Total number of classes (C).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub base_classes: Option<usize>,
    #[arg(long)]
    pub novel_classes: Option<usize>,
    #[arg(long)]
    pub descriptions: Option<usize>,
    /// Image-feature noise level.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub images_per_class: Option<usize>,
    #[arg(long)]
    pub attributes: Option<usize>,
    #[arg(long)]
    pub attribute_spread: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct AblateArgs {
    /// Sweep axis such as `T=0,4`, `J=1,2`, `loss=mse,l1,contrastive`,
    /// `target=per-sample,ensembled` or `descriptions=1,5,20`. Repeatable.
    #[arg(long = "axis", value_name = "NAME=V1,V2")]
    pub axes: Vec<String>,
    #[command(flatten)]
    pub world: WorldFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Default, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub encoder: EncoderPaths,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Neighbours listed per prompt vector.
    #[arg(short, long)]
    pub k: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub world: WorldFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Also write the world's vocabulary, weights, dataset and images under `OUT/world/`.
    #[arg(long)]
    pub export_world: bool,
}
