use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caipi_cli::error::Result;
use caipi_cli::output::format_decoy_table;
use caipi_cli::run::{cmd_decoy_table, cmd_run, describe, resolve_config, Overrides};
use caipi_cli::service::{serve, AppState};
use caipi_cli::CliError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caipi", version, about = "Explanatory interactive learning: experiments and live annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cross-validated experiment and write its metrics.
    Run(RunArgs),
    /// Train the MLP on the decoy data with and without counterexamples.
    DecoyTable(DecoyArgs),
    /// Serve the session API for live annotation.
    Serve(ServeArgs),
    /// Check a config file and print a one-line description.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's number of folds.
    #[arg(long)]
    folds: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<caipi_core::session::ExperimentConfig> {
        resolve_config(
            &self.config,
            Overrides {
                seed: self.seed,
                folds: self.folds,
            },
        )
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the resolved config and exit without running or writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct DecoyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Counterexamples per image for the corrected columns.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    copies: Vec<usize>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Config used by `POST /sessions` requests without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Directory of session event logs.
    #[arg(long, default_value = "sessions")]
    store: PathBuf,
}

fn print_manifest_paths(out: &Path, run_id: &str) {
    println!("run {run_id} written to {}", out.display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.config.resolve()?;
            if args.dry_run {
                print!("{}", config.to_toml());
                return Ok(());
            }
            let (result, manifest) = cmd_run(&config, &args.out)?;
            if let Some(last) = result.curves.last() {
                println!(
                    "t={} predictive F1 {:.3}, instantaneous F1 {:.3}, cumulative F1 {:.3}",
                    last.t, last.predictive.mean, last.instantaneous_f1.mean, last.cumulative_f1.mean
                );
            }
            print_manifest_paths(&args.out, &manifest.run_id);
        }
        Command::DecoyTable(args) => {
            let config = args.config.resolve()?;
            if args.dry_run {
                print!("{}", config.to_toml());
                return Ok(());
            }
            let (rows, manifest) = cmd_decoy_table(&config, &args.out, &args.copies)?;
            print!("{}", format_decoy_table(&rows));
            print_manifest_paths(&args.out, &manifest.run_id);
        }
        Command::Serve(args) => {
            let default = args
                .config
                .as_deref()
                .map(|p| resolve_config(p, Overrides::default()))
                .transpose()?;
            let state = AppState::load(&args.store, default)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.to_string()))?;
            rt.block_on(serve(&args.bind, state))?;
        }
        Command::Validate(args) => {
            let config = args.resolve()?;
            println!("valid: {}", describe(&config));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
