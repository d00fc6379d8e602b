use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod exit;

/// Simulate, train, evaluate and serve Mafia role-inference experiments.
#[derive(Parser, Debug)]
#[command(name = "mafia", version)]
struct Cli {
    /// Server config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Game archive (JSON lines). Input for most commands, output for `simulate`.
    #[arg(long, global = true)]
    archive: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the game server until interrupted.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Generate a synthetic corpus into --archive.
    Simulate(SimulateArgs),
    /// Turn archived games into scorer training examples.
    Process(ProcessArgs),
    /// Fit one scorer and save it.
    Train(TrainArgs),
    /// Split, train and report ranking metrics per method.
    Evaluate(EvaluateArgs),
    /// Rank the players of one game by suspicion.
    Rank(RankArgs),
    /// Hand-feature centroids, D(u) and their agreement with a method.
    Features(FeaturesArgs),
    /// Draw role-conditioned lines from a saved generative scorer.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 44)]
    games: usize,
    /// Signal strength: chance a line comes from the speaker's role pack.
    #[arg(long, default_value_t = 0.6)]
    signal: f64,
    #[arg(long, default_value_t = 10)]
    players: u32,
    #[arg(long, default_value_t = 2)]
    mafia: u32,
    /// Template pack JSON; the bundled pack if omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Corpus statistics JSON; defaults to the archive path with `.stats.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Classification,
    Generation,
    Standard,
}

#[derive(Args, Debug)]
struct ProcessArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Context budget in tokens.
    #[arg(long, default_value_t = 512)]
    window: usize,
    /// Examples as JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    StdClass,
    UttClass,
    UttGen,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Examples from `process`; built from --archive when omitted.
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    window: usize,
    /// Smoothing constant (Laplace for classifiers, add-k for the language model).
    #[arg(long)]
    smoothing: Option<f64>,
    /// Classifier weight on context features.
    #[arg(long)]
    context_weight: Option<f64>,
    /// Language-model order.
    #[arg(long)]
    order: Option<usize>,
    /// Language-model weight on the context unigram distribution.
    #[arg(long)]
    context_lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ScorerArgs {
    /// Saved or remote scorer, as METHOD=PATH or METHOD=http://host:port.
    /// Methods without one are trained on the training games.
    #[arg(long = "scorer", value_name = "METHOD=SOURCE")]
    scorers: Vec<String>,
    /// Mafia prior for Random and Utt Gen; the training ratio if omitted.
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long, default_value_t = 512)]
    window: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Games held out for validation.
    #[arg(long, default_value_t = 5)]
    validation: usize,
    /// Comma-separated methods.
    #[arg(long, default_value = "random,std_class,utt_class,utt_gen")]
    methods: String,
    /// Top-k cutoff; the true mafia count of the validation games if omitted.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    scorers: ScorerArgs,
    #[arg(long, default_value = "evaluation.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Game to rank; the first game in the archive if omitted.
    #[arg(long)]
    game: Option<String>,
    #[arg(long, default_value = "utt_gen")]
    method: String,
    #[command(flatten)]
    scorers: ScorerArgs,
    #[arg(long, default_value = "rank.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    /// Manual annotations (JSON lines); automatic tagging if omitted.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Lexicon JSON for automatic tagging.
    #[arg(long)]
    lexicons: Option<PathBuf>,
    /// Game for the per-player table; the first game if omitted.
    #[arg(long)]
    game: Option<String>,
    #[arg(long, default_value = "utt_gen")]
    method: String,
    #[command(flatten)]
    scorers: ScorerArgs,
    #[arg(long, default_value = "features.json")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum RoleArg {
    Mafioso,
    Bystander,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Saved generative scorer.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, value_enum)]
    role: RoleArg,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value = "samples.json")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => exit::USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
