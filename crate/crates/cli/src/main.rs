//! `agentprint`: capture-to-report pipeline for LLM agent traffic
//! fingerprinting and occupation profiling.
//!
//! Exit status is 0 on success, 1 when arguments or inputs are invalid and 2
//! when a run fails for another reason (I/O, diverging training).

mod error;
mod occupation;
mod traffic;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use agentprint::evaluation::{LabelKind, SplitRatios};
use agentprint::features::{Normalization, WindowMode, DEFAULT_GAP, DEFAULT_WINDOWS};
use agentprint::trace::{FlowScope, DEFAULT_SESSION_GAP};

pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "agentprint",
    version,
    about = "Fingerprint LLM agent traffic and profile users' occupations"
)]
struct Cli {
    /// Log progress (info level) to stderr. RUST_LOG overrides.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split pcap captures into per-session traces (JSONL).
    Ingest(IngestArgs),
    /// Turn traces into a normalized MTAM dataset.
    Extract(ExtractArgs),
    /// Train a classifier on a dataset.
    Train(TrainArgs),
    /// Predict labels for traces or dataset samples.
    Classify(ClassifyArgs),
    /// Repeated random-split evaluation of the training recipe.
    Evaluate(EvaluateArgs),
    /// Occupation network construction and community detection.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Agent × community association matrix.
    Correlate(CorrelateArgs),
    /// Infer occupation communities from ranked agent lists.
    Profile(ProfileArgs),
    /// Seeded synthetic traffic and users.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// A capture file, or a directory whose `*.pcap` files are read in name order.
    #[arg(long)]
    pub pcap: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub client_ip: Vec<String>,
    /// Provider addresses or prefixes, e.g. `104.18.0.0/16`.
    #[arg(long, value_delimiter = ',')]
    pub provider_ip: Vec<String>,
    #[arg(long, default_value = "primary")]
    pub scope: FlowScope,
    /// Idle seconds that end a session.
    #[arg(long, default_value_t = DEFAULT_SESSION_GAP)]
    pub session_gap: f64,
    /// Label attached to every emitted trace.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Uniform,
    FixedGap,
}

impl From<ModeArg> for WindowMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Uniform => WindowMode::Uniform,
            ModeArg::FixedGap => WindowMode::FixedGap,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    pub mode: ModeArg,
    /// Window width in seconds (fixed-gap mode).
    #[arg(long, default_value_t = DEFAULT_GAP)]
    pub gap: f64,
    /// Cap on per-window packet counts.
    #[arg(long)]
    pub clip_counts: Option<f64>,
    /// Cap on per-window byte volumes.
    #[arg(long)]
    pub clip_bytes: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOWS)]
    pub windows: usize,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, default_value = "none")]
    pub normalize: Normalization,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Standard,
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Clone)]
pub struct RecipeArgs {
    /// Which part of `archetype:Behavior` labels to learn.
    #[arg(long, default_value = "behavior")]
    pub labels: LabelKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value = "standard")]
    pub arch: ArchArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub recipe: RecipeArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Window settings used when extracting from `--traces`; the window
    /// count comes from the model.
    #[command(flatten)]
    pub window: WindowArgs,
    /// Reject predictions whose top probability is below `--threshold`.
    #[arg(long, requires = "threshold")]
    pub open_world: bool,
    #[arg(long, requires = "open_world")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Map true labels in the output the way training mapped them.
    #[arg(long)]
    pub labels: Option<LabelKind>,
    /// Penultimate-layer embeddings CSV.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value = "8:1:1")]
    pub split: SplitRatios,
    #[command(flatten)]
    pub recipe: RecipeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum GraphCommand {
    /// Build the occupation similarity network from O*NET-style CSVs.
    Build {
        /// Directory with occupations.csv, tasks.csv, dwa_links.csv (dwas.csv optional).
        #[arg(long)]
        onet: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign communities by Louvain, or install them from a partition file.
    Communities {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this partition instead of running detection.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        /// Network file with the partition installed.
        #[arg(long)]
        out: PathBuf,
        /// Also write the partition as CSV.
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// `agent_id,dwa_id` rows.
    #[arg(long)]
    pub agents: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub rmatrix: PathBuf,
    /// `user_id,true_community,ranked_agents` rows, agents joined by `;`.
    #[arg(long)]
    pub ranks: PathBuf,
    #[arg(long, default_value_t = agentprint::occupation::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Per-position swap probability applied to each user's rank vector over
    /// all agents in the matrix: the listed ones, then the unused ones.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum SimulateCommand {
    /// Behavior traces from an archetype library.
    Traffic {
        /// Library JSON; the built-in library when omitted.
        #[arg(long)]
        archetypes: Option<PathBuf>,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Virtual users with a planted community and a ranked agent list.
    Users {
        /// Network the matrix was computed on; checked against its digest.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        rmatrix: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        list_length: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => traffic::ingest(&a),
        Command::Extract(a) => traffic::extract(&a),
        Command::Train(a) => traffic::train(&a),
        Command::Classify(a) => traffic::classify(&a),
        Command::Evaluate(a) => traffic::evaluate(&a),
        Command::Graph(g) => occupation::graph(&g),
        Command::Correlate(a) => occupation::correlate(&a),
        Command::Profile(a) => occupation::profile(&a),
        Command::Simulate(SimulateCommand::Traffic {
            archetypes,
            per_class,
            seed,
            out,
        }) => traffic::simulate_traffic(archetypes.as_deref(), per_class, seed, &out),
        Command::Simulate(SimulateCommand::Users {
            network,
            rmatrix,
            count,
            seed,
            list_length,
            out,
        }) => occupation::simulate_users(network.as_deref(), &rmatrix, count, seed, list_length, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
