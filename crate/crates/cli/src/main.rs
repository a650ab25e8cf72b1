use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use llmemb_cli::config::ARTIFACTS_ENV;
use llmemb_cli::{CliError, Pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "llmemb", version, about = "Attribute-prompt item embeddings for sequential recommendation")]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory, overriding `paths.artifacts`.
    #[arg(long, global = true, env = ARTIFACTS_ENV)]
    artifacts: Option<PathBuf>,

    /// Global seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override any config key, e.g. `--set rat.gamma=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Recompute even when the stage manifest is up to date.
    #[arg(long, global = true)]
    force: bool,

    /// Debug logging.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic catalog, interactions and cluster sidecar.
    GenData,
    /// Contrastive fine-tuning of the text encoder.
    Scft,
    /// Encode the full catalog with the fine-tuned encoder.
    Embed,
    /// PCA of the catalog embeddings down to d_m.
    Reduce,
    /// Train the ID-embedding baseline; its table is the alignment target.
    PretrainSrs,
    /// Train adapter and backbone over the frozen reduced embeddings.
    Rat,
    /// Precompute the final item embedding table.
    Cache,
    /// Evaluate the baseline and the adapted model.
    Eval,
    /// Uniformity and 2-D projections of every embedding table.
    Diag,
    /// One-at-a-time sweep over gamma, alpha and d_m.
    Sweep,
    /// Every stage from gen-data to diag, in order.
    All,
    /// Print the resolved configuration as TOML.
    PrintConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let stage = match cli.command {
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            return Ok(());
        }
        Command::All => {
            return Pipeline::new(config, cli.artifacts, cli.force).run_all();
        }
        Command::GenData => Stage::GenData,
        Command::Scft => Stage::Scft,
        Command::Embed => Stage::Embed,
        Command::Reduce => Stage::Reduce,
        Command::PretrainSrs => Stage::PretrainSrs,
        Command::Rat => Stage::Rat,
        Command::Cache => Stage::Cache,
        Command::Eval => Stage::Eval,
        Command::Diag => Stage::Diag,
        Command::Sweep => Stage::Sweep,
    };
    Pipeline::new(config, cli.artifacts, cli.force).run(stage).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
