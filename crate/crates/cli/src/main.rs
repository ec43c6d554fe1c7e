use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dal_cli::config::override_seeds;
use dal_cli::diag::{report, What};
use dal_cli::runner::generate;
use dal_cli::{parse_config, run_experiment, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dal", about = "Distribution adaptable learning over evolving task streams", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant and seed of a config and write the artifacts.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured streams as per-task CSV files.
    Gen {
        config: PathBuf,
        /// Defaults to `<output_dir>/stream`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report diagnostics over a completed run directory.
    Diag {
        run_dir: PathBuf,
        #[arg(long, value_enum)]
        what: What,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut cfg = parse_config(path)?;
    if let Ok(seeds) = std::env::var("DAL_SEED") {
        override_seeds(&mut cfg, &seeds)?;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, out } => {
            let mut cfg = load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let outcome = run_experiment(&cfg)?;
            println!("{} records written to {}", outcome.records.len(), outcome.dir.display());
        }
        Command::Gen { config, out } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("stream"));
            let files = generate(&cfg, &out)?;
            println!("{} task files written to {}", files.len(), out.display());
        }
        Command::Diag { run_dir, what } => print!("{}", report(&run_dir, what)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
