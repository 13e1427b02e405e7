use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use samm_cli::config::RunConfig;
use samm_cli::simulate::SimulateConfig;
use samm_cli::CliError;

#[derive(Parser)]
#[command(
    name = "samm",
    version,
    about = "Spatial additive mixed models with streaming, memory-bounded estimation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model to a delimited table (two streaming passes plus recovery).
    Fit(FitArgs),
    /// Predict responses and effects at new sites from a saved model.
    Predict(PredictArgs),
    /// Run the replicated simulation experiment grid.
    Simulate(SimArgs),
    /// Print a model file's parameters.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Key/value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input table (overrides the config key).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (overrides the config key).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Additional KEY=VALUE overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
    /// Table of new sites (same column names as training).
    #[arg(long)]
    input: PathBuf,
    /// Output prediction table.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    block_rows: usize,
    #[arg(long, default_value = ",")]
    delimiter: String,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct InspectArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("samm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Fit(args) => {
            let mut config = RunConfig::default();
            if let Some(path) = &args.config {
                config.apply_file(path)?;
            }
            if let Some(input) = args.input {
                config.input = Some(input);
            }
            if let Some(dir) = args.output_dir {
                config.output_dir = dir;
            }
            config.apply_overrides(&args.sets)?;
            let artifacts = samm_cli::fit::run_fit(&config)?;
            println!(
                "fit: {} rows ({} rejected), loglik {:.6}, sigma2 {:.6e}, {} sweeps{}",
                artifacts.n_rows,
                artifacts.n_rejected,
                artifacts.fit.loglik_r,
                artifacts.fit.sigma2_hat,
                artifacts.fit.n_sweeps,
                if artifacts.fit.converged {
                    ""
                } else {
                    " (not converged)"
                }
            );
            println!("model:   {}", artifacts.model_path.display());
            println!("effects: {}", artifacts.effects_path.display());
            println!("summary: {}", artifacts.summary_path.display());
            if let Some(store) = artifacts.store_path {
                println!("store:   {}", store.display());
            }
            Ok(())
        }
        Cmd::Predict(args) => {
            let delimiter = parse_delimiter(&args.delimiter)?;
            let artifacts = samm_cli::predict::run_predict(
                &args.model,
                &args.input,
                &args.output,
                args.block_rows,
                delimiter,
            )?;
            println!(
                "predict: {} rows ({} with unseen group labels) -> {}",
                artifacts.rows,
                artifacts.unseen_label_rows,
                artifacts.output_path.display()
            );
            Ok(())
        }
        Cmd::Simulate(args) => {
            let mut config = SimulateConfig::default();
            if let Some(path) = &args.config {
                config.apply_file(path)?;
            }
            if let Some(dir) = args.output_dir {
                config.output_dir = dir;
            }
            config.apply_overrides(&args.sets)?;
            let artifacts = samm_cli::simulate::run_simulate(&config)?;
            println!(
                "simulate: {} cells x {} replicates",
                artifacts.summary.cells.len(),
                artifacts.summary.replicates
            );
            println!("summary: {}", artifacts.summary_path.display());
            println!("seeds:   {}", artifacts.seeds_path.display());
            println!("timings: {}", artifacts.timings_path.display());
            Ok(())
        }
        Cmd::Inspect(args) => {
            let text = samm_cli::inspect::run_inspect(&args.model)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_delimiter(s: &str) -> Result<u8, CliError> {
    let bytes = s.as_bytes();
    if bytes.len() != 1 {
        return Err(CliError::Usage(format!(
            "delimiter must be a single character, got '{s}'"
        )));
    }
    Ok(bytes[0])
}
