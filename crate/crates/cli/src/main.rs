use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "gta", version, about = "Steerable tabletop manipulation: data, training, benchmarks, live sessions")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "GTA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert trajectories and annotate them with guidance-augmented CoT.
    Datagen(DatagenArgs),
    /// Collect (chunk, conditioning) demonstrations for the action head.
    Collect(CollectArgs),
    /// Train the action head.
    Train(TrainArgs),
    /// Run evaluation suites and write reports.
    Bench(BenchArgs),
    /// Run one episode and write its trace.
    Episode(EpisodeArgs),
    /// Serve live sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

/// Which action source drives episodes.
#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
pub struct PolicyArgs {
    /// Trained action head, as written by `gta train`.
    #[arg(long, env = "GTA_MODEL")]
    pub model: Option<PathBuf>,
    /// Use the scripted memory-following expert instead of a model.
    #[arg(long)]
    pub expert: bool,
}

#[derive(Args)]
pub struct DatagenArgs {
    /// Existing trajectories (JSON lines); recorded from the expert when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "single_target,color_distractor,position_distractor,obstacle")]
    pub scenarios: Vec<String>,
    /// Trajectories to record when no input is given.
    #[arg(long, default_value_t = 200)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 120)]
    pub max_ticks: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recipe overrides as a TOML file (same fields as the defaults).
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    #[arg(long)]
    pub enable_probability: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub chunk_length: usize,
    /// Output sample shards.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    #[arg(long, default_value = "datagen-out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CollectArgs {
    #[arg(long, value_delimiter = ',', default_value = "single_target")]
    pub scenarios: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub prior_probability: f64,
    #[arg(long, default_value = "demos.jsonl")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Recipe {
    SingleTarget,
    MultiScenario,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Demonstrations from `gta collect`; collected from the recipe when absent.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "multi-scenario")]
    pub recipe: Recipe,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Loss curve CSV.
    #[arg(long)]
    pub loss: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Shift categories, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    pub suite: Vec<String>,
    /// Guidance modalities: none, point, box, trace.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    pub modality: Vec<String>,
    /// Ablation sets such as `full`, `-task` or `-vision+-robot`.
    #[arg(long, value_delimiter = ',', default_value = "full", allow_hyphen_values = true)]
    pub ablation: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Re-run up to this many failures per cell with an oracle prior.
    #[arg(long)]
    pub recovery: Option<usize>,
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EpisodeArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value = "single_target")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runtime configuration as TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mid-episode click, `x,y@tick`; repeatable.
    #[arg(long)]
    pub click: Vec<String>,
    /// Trace output (JSON lines); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Clock {
    Simulated,
    Wall,
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, env = "GTA_BIND", default_value = "127.0.0.1:7878")]
    pub bind: String,
    /// Live sessions allowed at once.
    #[arg(long, env = "GTA_CAPACITY", default_value_t = 8)]
    pub capacity: usize,
    #[arg(long, env = "GTA_CLOCK", value_enum, default_value = "simulated")]
    pub clock: Clock,
    /// Per-client message buffer before frames are dropped.
    #[arg(long, env = "GTA_STREAM_BUFFER", default_value_t = 1024)]
    pub stream_buffer: usize,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Datagen(a) => commands::datagen(a),
        Command::Collect(a) => commands::collect(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Bench(a) => commands::bench(a),
        Command::Episode(a) => commands::episode(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
