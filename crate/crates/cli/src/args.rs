use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use planmae_core::{Anchor, Mode, Side, Strategy};

use crate::config::{Profile, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "planmae", version, about = "Masked-autoencoder floorplan completion")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "PLANMAE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Size profile supplying the defaults.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural floorplan corpus.
    GenerateData(GenerateArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Mask and reconstruct one image.
    Reconstruct(ReconstructArgs),
    /// Score a checkpoint on the test split for a list of strategies.
    Evaluate(EvaluateArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: planmae_core::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: planmae_core::Error| e.to_string())
}

fn parse_side(s: &str) -> Result<Side, String> {
    s.parse().map_err(|e: planmae_core::Error| e.to_string())
}

fn parse_anchor(s: &str) -> Result<Anchor, String> {
    s.parse().map_err(|e: planmae_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `colored` or `line`.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Output side length in pixels; defaults to the model image size.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus root (with train/ and optionally manifest.json).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints, loss CSV and config dump.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Training seed (sample order and mask draws).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter-initialization seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Training mask, `name[:ratio[:side|anchor]]`.
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Use only the first N training images.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PNG at the model's resolution.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for masked.png, reconstruction.png and plan.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_strategy, conflicts_with = "plan")]
    pub strategy: Option<Strategy>,
    #[arg(long, conflicts_with = "plan")]
    pub ratio: Option<f64>,
    #[arg(long, conflicts_with = "plan")]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_side, conflicts_with = "plan")]
    pub side: Option<Side>,
    #[arg(long, value_parser = parse_anchor, conflicts_with = "plan")]
    pub anchor: Option<Anchor>,
    /// Mask plan JSON whose masked set is applied verbatim.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus root; its test/ split is scored.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated strategies, e.g. `one_sided:0.3,corner:0.75`.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    /// Base seed for random plans.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Directory for report.csv, report.txt and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Allowed CORS origin; repeatable, `*` for any.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

impl Cli {
    /// The flag layer of the configuration.
    pub fn overlay(&self) -> RunConfig {
        let mut c = RunConfig {
            profile: self.profile,
            ..RunConfig::default()
        };
        match &self.command {
            Command::GenerateData(a) => {
                c.dataset.root = Some(a.out.clone());
                c.dataset.train = a.train;
                c.dataset.val = a.val;
                c.dataset.test = a.test;
                c.dataset.seed = a.seed;
                c.dataset.mode = a.mode;
                c.dataset.resolution = a.resolution;
            }
            Command::Train(a) => {
                c.dataset.root = a.data.clone();
                c.dataset.mode = a.mode;
                c.training.out_dir = a.out.clone();
                c.training.steps = a.steps;
                c.training.batch_size = a.batch_size;
                c.training.learning_rate = a.lr;
                c.training.warmup_steps = a.warmup_steps;
                c.training.weight_decay = a.weight_decay;
                c.training.seed = a.seed;
                c.training.checkpoint_every = a.checkpoint_every;
                c.training.limit = a.limit;
                c.model.seed = a.init_seed;
                c.masking.train = a.mask.clone();
            }
            Command::Reconstruct(_) => {}
            Command::Evaluate(a) => {
                c.dataset.root = a.data.clone();
                c.dataset.mode = a.mode;
                c.masking.eval = a.strategies.clone();
                c.masking.seed = a.seed;
            }
            Command::Serve(a) => {
                c.service.checkpoint = a.checkpoint.clone();
                c.service.host = a.host.clone();
                c.service.port = a.port;
                if !a.cors_origins.is_empty() {
                    c.service.cors_origins = Some(a.cors_origins.clone());
                }
            }
        }
        c
    }
}
