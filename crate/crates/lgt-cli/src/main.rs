use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lgt_cli::runner::{self, RunOptions};
use lgt_cli::CliError;

/// Environment variable holding the default worker-thread count.
const THREADS_ENV: &str = "LGT_THREADS";

#[derive(Parser)]
#[command(
    name = "lgt",
    version,
    about = "Workbench for a compact U(1) lattice gauge theory with Higgs matter: \
             sector analysis, low spectra, real-time dynamics, and validation of \
             the perturbative effective description of its bosonic-atom realization."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run described by a JSON config and write its artifacts.
    Run {
        /// Path of the run configuration (a single JSON document).
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sampling seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: LGT_THREADS, else all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Validate and estimate sizes, write nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Check a config and print its fully normalized form.
    Validate {
        /// Path of the run configuration.
        config: PathBuf,
    },
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(CliError::Config(vec![
                "--threads: must be at least 1".into()
            ]));
        }
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(vec![format!(
                "{THREADS_ENV}: expected a positive integer, found {text:?}"
            )])),
        },
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            dry_run,
        } => {
            let requested = resolve_threads(threads)?;
            if let Some(n) = requested {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            }
            let opts = RunOptions {
                out_override: out.map(|p| p.display().to_string()),
                seed_override: seed,
                threads: requested.unwrap_or_else(rayon::current_num_threads),
                dry_run,
            };
            let outcome = runner::run(&config, &opts)?;
            for line in &outcome.lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let report = runner::validate(&config)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| CliError::Io(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
