use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "color-lab", version, about = "Scene-graph to layout generation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene corpus.
    GenData(GenDataArgs),
    /// Train a layout generator on a corpus.
    Train(TrainArgs),
    /// Score a checkpoint (or the corpus itself) with the layout metrics.
    Eval(EvalArgs),
    /// Write PPM renderings of generated or ground-truth layouts.
    Render(RenderArgs),
    /// Summarize a corpus or a training log.
    Stats(StatsArgs),
}

/// Seed given on the command line, else `COLOR_LAB_SEED`.
#[derive(Args, Clone, Copy)]
pub struct SeedArg {
    #[arg(long, env = "COLOR_LAB_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, short = 'n')]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 5)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 8)]
    pub max_edges: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Ablate {
    NoDiscriminator,
    NoLayoutLoss,
    Baseline,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the checkpoint, log and eval reports.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key.subkey=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablate>,
    /// Total number of steps to reach (counting resumed steps).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Scenes at the end of the corpus kept out of training and used for
    /// periodic evaluation.
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    /// Score the corpus layouts instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ground_truth: bool,
    /// Generations per graph.
    #[arg(short, long, default_value_t = 1)]
    pub k: usize,
    /// Evaluate only the last N scenes (0 = all).
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "graph")]
    pub checkpoint: Option<PathBuf>,
    /// Scene graph record (JSON) to generate from.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Render a corpus scene's own layouts.
    #[arg(long, conflicts_with = "checkpoint", requires = "scene")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<usize>,
    /// JSON object mapping class names to `[r, g, b]`.
    #[arg(long)]
    pub palette: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long, required_unless_present = "log")]
    pub dataset: Option<PathBuf>,
    /// Training log (JSON lines) to summarize.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Render(a) => commands::render(&a),
        Command::Stats(a) => commands::stats(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
