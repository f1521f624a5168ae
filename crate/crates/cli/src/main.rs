mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::Config;

/// Generate, run and repair MOOSE input cards with a language model.
#[derive(Debug, Parser)]
#[command(name = "hitforge", version, about)]
struct Cli {
    /// TOML configuration file (default: ./hitforge.toml if present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan a card repository and a documentation dump into the knowledge base.
    BuildKb {
        /// Root of the input-card repository.
        #[arg(long)]
        root: PathBuf,
        /// JSON parameter dump of the object documentation.
        #[arg(long)]
        dump: PathBuf,
    },
    /// Annotate unannotated corpus cards and refresh the card index.
    Annotate {
        /// Maximum number of records to annotate in this invocation.
        #[arg(long)]
        budget: Option<usize>,
        /// Directory holding a scripted `llm.json` instead of a live model.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Generate input cards for a request and run them until they work.
    Run {
        /// The request text, or a path to a file containing it.
        request: String,
        /// Ask for confirmation of the aligned plan.
        #[arg(long)]
        interactive: bool,
        /// Directory holding `llm.json` (and optionally `runner.json`).
        #[arg(long)]
        replay: Option<PathBuf>,
        /// JSON mock-runner script used instead of the solver.
        #[arg(long)]
        mock_runner: Option<PathBuf>,
    },
    /// Run the bundled test cases and write the metrics report.
    Eval {
        /// Case to run; repeat for several (default: all).
        #[arg(long = "case")]
        cases: Vec<String>,
        /// Trials per case.
        #[arg(long)]
        trials: Option<usize>,
        /// Directory with `<Case>/llm.json` and `<Case>/runner.json` scripts.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// JSON mock-runner script used for every trial.
        #[arg(long)]
        mock_runner: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = Config::load(cli.config.as_deref()).map_err(Failure::Config)?;
    match cli.command {
        Command::BuildKb { root, dump } => commands::build_kb(&config, &root, &dump),
        Command::Annotate { budget, replay } => commands::annotate(&config, budget, replay.as_deref()),
        Command::Run {
            request,
            interactive,
            replay,
            mock_runner,
        } => commands::run(&config, &request, interactive, replay.as_deref(), mock_runner.as_deref()),
        Command::Eval {
            cases,
            trials,
            replay,
            mock_runner,
        } => commands::eval(&config, &cases, trials, replay.as_deref(), mock_runner.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(message) = f.message() {
                eprintln!("error: {message}");
            }
            ExitCode::from(f.code())
        }
    }
}
