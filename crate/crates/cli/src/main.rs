//! `bexplore`: run, sweep, re-aggregate, and validate experiment configs.
//! Exit codes: 0 success, 2 config error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bexplore::error::Error;
use bexplore::harness::{self, RunOptions};

#[derive(Parser)]
#[command(name = "bexplore", version, about = "Model-based exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Parallel worker slots for seeds (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Offset added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Output root; overrides the config and the BEXPLORE_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonOpts {
    fn to_options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs,
            seed_offset: self.seed_offset,
            out_override: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute all seeds and write per-seed trace CSVs plus the aggregate.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run a grid over one config key, e.g. --vary planner.bonus.eta=0.5,1,2
    Sweep {
        config: PathBuf,
        /// key=v1,v2,... (dotted key path into the config)
        #[arg(long)]
        vary: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Re-aggregate an existing run directory from its trace CSVs.
    Report { dir: PathBuf },
    /// Parse a config file and check its invariants.
    Validate { config: PathBuf },
}

const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

fn classify(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. } | Error::UnknownLayout(_) | Error::InvalidLayout(_) => {
            CONFIG_ERROR
        }
        _ => RUNTIME_ERROR,
    }
}

fn fail(context: &Path, err: Error) -> (u8, String) {
    (classify(&err), format!("{}: {err}", context.display()))
}

/// Load-stage failures (unreadable or invalid config) are always exit 2.
fn fail_load(context: &Path, err: Error) -> (u8, String) {
    (CONFIG_ERROR, format!("{}: {err}", context.display()))
}

fn execute(cli: Cli) -> Result<(), (u8, String)> {
    match cli.command {
        Command::Run { config, opts } => {
            let parsed = harness::load_config(&config).map_err(|e| fail_load(&config, e))?;
            let dir = harness::run_experiment(&parsed, &opts.to_options())
                .map_err(|e| fail(&config, e))?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Sweep { config, vary, opts } => {
            let (key, values) = vary.split_once('=').ok_or((
                CONFIG_ERROR,
                format!("--vary must look like key=v1,v2, got {vary:?}"),
            ))?;
            let values: Vec<String> = values.split(',').map(str::to_string).collect();
            let parsed = harness::load_config(&config).map_err(|e| fail_load(&config, e))?;
            let dirs = harness::run_sweep(&parsed, key, &values, &opts.to_options())
                .map_err(|e| fail(&config, e))?;
            for dir in dirs {
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Report { dir } => {
            // A report's only input is the directory; every failure there is
            // a bad-input error.
            let written = harness::report(&dir).map_err(|e| fail_load(&dir, e))?;
            println!("{}", written.display());
            Ok(())
        }
        Command::Validate { config } => {
            harness::load_config(&config).map_err(|e| fail_load(&config, e))?;
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
