mod plot;
mod run;
mod svg;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Population-dynamics dispatch of distributed generators on radial feeders.
#[derive(Debug, Parser)]
#[command(name = "popdispatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse inputs, check the feeder is radial and report the key-node reduction.
    Validate(ValidateArgs),
    /// Run a scenario and write set points, flows, events and metrics.
    Run(RunArgs),
    /// Render SVG charts from a result directory.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Scenario file naming the inputs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Line table, overriding the scenario's.
    #[arg(long)]
    pub feeder: Option<PathBuf>,
    /// Bus table, overriding the scenario's.
    #[arg(long)]
    pub buses: Option<PathBuf>,
    /// Generator table, overriding the scenario's.
    #[arg(long)]
    pub generators: Option<PathBuf>,
    /// Load profile, overriding the scenario's.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DynamicsArg {
    Replicator,
    LocalReplicator,
    Smith,
    DistributedSmith,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Uniform,
    Nearest,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; the bundled feeder and day profile when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dynamics: Option<DynamicsArg>,
    /// `complete`, `path`, or an edge-list file.
    #[arg(long)]
    pub graph: Option<String>,
    /// Line limit override, e.g. `505-666=28`. Repeatable.
    #[arg(long = "limit", value_name = "LINE=KW")]
    pub limits: Vec<String>,
    /// Run only the profile step at this minute.
    #[arg(long, value_name = "T")]
    pub step: Option<u32>,
    #[arg(long, value_enum)]
    pub warm_start: Option<Switch>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Output directory.
    #[arg(long, default_value = "popdispatch-out")]
    pub out: PathBuf,
    /// Reserved. Runs are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory written by `run`.
    pub dir: PathBuf,
    /// Where to write the SVG files; defaults to DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POPDISPATCH_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match cli.command {
        Command::Validate(args) => validate::run(&args).map(|()| 0),
        Command::Run(args) => run::run(&args).map(|converged| if converged { 0 } else { EXIT_NOT_CONVERGED }),
        Command::Plot(args) => plot::run(&args).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
