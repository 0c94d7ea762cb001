mod commands;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use cloze_pet::corpus::ContextMode;

#[derive(Parser)]
#[command(
    name = "cloze-pet",
    version,
    about = "Few-shot section classification with cloze prompts"
)]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic letter corpus.
    Generate(GenerateArgs),
    /// Apply the label schema and context mode and write the few-shot bundles.
    Prepare(ExpArgs),
    /// Build the base model and further-pretrain every configured variant.
    Pretrain(ExpArgs),
    /// Train PET on one few-shot set and evaluate on the holdout.
    TrainPet(TrainArgs),
    /// Train the supervised sequence-classification baseline.
    TrainSc(TrainScArgs),
    /// Classify the holdout with a verbalizer and no training.
    ZeroShot(ZeroShotArgs),
    /// Evaluate a classifier checkpoint on the holdout.
    Eval(ModelArgs),
    /// Approximate randomization test between two prediction files.
    Significance(SignificanceArgs),
    /// Shapley attributions for holdout predictions.
    Explain(ExplainArgs),
    /// Run or resume the full experiment grid.
    Grid(GridArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Prepare(_) => "prepare",
            Command::Pretrain(_) => "pretrain",
            Command::TrainPet(_) => "train-pet",
            Command::TrainSc(_) => "train-sc",
            Command::ZeroShot(_) => "zero-shot",
            Command::Eval(_) => "eval",
            Command::Significance(_) => "significance",
            Command::Explain(_) => "explain",
            Command::Grid(_) => "grid",
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator spec (JSON); defaults to the built-in benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite output written by a different invocation.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateGroup {
    Core,
    Null,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    Nocontext,
    Prevcontext,
    Context,
}

impl From<ContextArg> for ContextMode {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Nocontext => ContextMode::NoContext,
            ContextArg::Prevcontext => ContextMode::PrevContext,
            ContextArg::Context => ContextMode::Context,
        }
    }
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config (JSON); without one the built-in synthetic benchmark is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seeds (one seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite output written by a different invocation.
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum)]
    context: Option<ContextArg>,
    #[arg(long, value_enum)]
    templates: Option<TemplateGroup>,
    /// Shot sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Model checkpoint file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Pretrained (MLM) checkpoint to start from.
    #[arg(long)]
    model: PathBuf,
    /// Few-shot set id (1-based).
    #[arg(long, default_value_t = 1)]
    set: usize,
}

#[derive(Args)]
struct TrainScArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Train on the whole training split instead of a few-shot set.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ZeroShotArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Verbalizer file with `class = token` lines.
    #[arg(long)]
    verbalizer: Option<PathBuf>,
    /// Template name; defaults to the first configured template.
    #[arg(long)]
    template: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    F1,
}

#[derive(Args)]
struct SignificanceArgs {
    /// Predictions of system A (`predictions.csv` or a run directory holding one).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "accuracy")]
    metric: MetricArg,
    /// Class scored by `--metric f1`.
    #[arg(long)]
    class: Option<String>,
    #[arg(long, default_value_t = cloze_pet::eval::DEFAULT_ROUNDS)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of holdout samples to explain.
    #[arg(long, default_value_t = 5)]
    limit: usize,
    /// Permutations for sampled attribution; exact enumeration is used when the
    /// sample has few enough groups.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// One group per sub-token instead of per word.
    #[arg(long)]
    subtokens: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Discard a grid that was written with a different config.
    #[arg(long)]
    force: bool,
    /// Cells run in parallel; capped by CLOZE_PET_THREADS.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    context: Option<ContextArg>,
    #[arg(long, value_enum)]
    templates: Option<TemplateGroup>,
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("CLOZE_PET_LOG")
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_ascii_lowercase(),
                record.target(),
                record.args()
            )
        })
        .init();
}

fn synopsis(subcommand: &str) -> String {
    let mut cmd = Cli::command();
    match cmd.find_subcommand_mut(subcommand) {
        Some(sub) => sub
            .render_usage()
            .to_string()
            .replacen("Usage: ", "Usage: cloze-pet ", 1),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let name = cli.command.name();
    match std::panic::catch_unwind(move || commands::run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) if e.is_data_error() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            eprintln!("{}", synopsis(name));
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(3),
    }
}
