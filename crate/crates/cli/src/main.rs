use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlkv_cli::config::{PipelineConfig, Profile};
use nlkv_cli::error::{CliError, Stage, Tagged};
use nlkv_cli::{stages, Overrides};
use nlkv_core::fitting::LossKind;
use nlkv_core::models::ModelKind;

#[derive(Parser)]
#[command(name = "nlkv", version, about = "Fit fundamental diagrams to vehicle trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trajectory file; repeat for several datasets.
    #[arg(long, global = true)]
    input: Vec<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Seed for the optimizer starts and the synthetic scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated: greenberg, smulders, franklin_newell.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelKind>>,
    /// Comma-separated: ece, nll, lse.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_loss)]
    loss: Option<Vec<LossKind>>,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse trajectory files into canonical datasets.
    Ingest,
    /// Generate a synthetic stationary-block dataset.
    Synth,
    /// Estimate speed, density, acceleration and anticipated-density fields.
    Fields,
    /// Assemble NLKV and LKV sample tables.
    Samples,
    /// Fit every requested model and loss.
    Fit,
    /// Tabulate the fit reports.
    Compare,
    /// Write plot-ready data from the stage artifacts.
    Diagnose,
    /// Run every stage.
    Run,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model `{s}`"))
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| format!("unknown loss `{s}`"))
}

fn load(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).at(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    Overrides {
        inputs: cli.input.clone(),
        profile: cli.profile,
        out: cli.out.clone(),
        seed: cli.seed,
        models: cli.models.clone(),
        losses: cli.loss.clone(),
    }
    .apply(&mut cfg);
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Ingest => stages::ingest(&cfg).map(drop),
        Command::Synth => stages::synth(&cfg).map(drop),
        Command::Fields => stages::fields(&cfg).map(drop),
        Command::Samples => stages::samples(&cfg).map(drop),
        Command::Fit => stages::fit(&cfg).map(drop),
        Command::Compare => stages::compare(&cfg).map(drop),
        Command::Diagnose => stages::emit_plot_data(&cfg),
        Command::Run => stages::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
