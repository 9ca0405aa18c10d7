//! `mollescore <command> --config <path> [--seed N] [--out DIR] [--threads N] [--dry-run]`

mod commands;
mod config;
mod svg;

use clap::Parser;
use config::Overrides;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "mollescore", version, about = "Closed-form score estimators for diffusion models")]
struct Args {
    /// One of gen-data, sample, kl-sweep, neff, covariance, dim-estimate,
    /// biasvar, memorize, ledkde, spectral-check.
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(config::COMMANDS))]
    command: String,
    /// JSON experiment file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Validate the config and print the plan without computing.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOLLESCORE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ov = Overrides { seed: args.seed, out: args.out, threads: args.threads };
    let exp = match config::load(&args.config, &args.command, ov) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = exp.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = if args.dry_run {
        commands::plan(&exp).map(|p| print!("{p}"))
    } else {
        commands::run(&exp)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
