use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use covfourier::cli_io::{error_record, exit_code, run, Mode, RunConfig, SEED_ENV};
use covfourier::error::Error;

/// Spot covariance estimation from high-frequency log-prices.
#[derive(Debug, Parser)]
#[command(name = "covfourier", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set estimator.gamma=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for output artifacts (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let text = match &cli.config {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        let mut cfg = RunConfig::load(text.as_deref(), &cli.overrides, env_seed.as_deref())?;
        if let Some(dir) = &cli.output_dir {
            cfg.output_dir = dir.clone();
        }
        run(cli.mode, &cfg)
    })();
    match &result {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Err(e) => eprintln!("{}", error_record(e)),
    }
    ExitCode::from(exit_code(&result) as u8)
}
