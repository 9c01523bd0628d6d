//! `varmdp`: percentile-criterion planning from batch data.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "varmdp", version, about = "Percentile-criterion optimization for offline tabular RL")]
struct Cli {
    /// Worker threads for parallel sampling and experiments (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory; takes precedence over `output_dir` in config files.
    #[arg(long, global = true, env = "VARMDP_OUTPUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a benchmark MDP (`mdp.json`) and its true kernel (`kernel.json`).
    GenerateDomain(commands::GenerateDomainArgs),
    /// Sample transition tuples from a kernel into `data.csv`.
    SampleData(commands::SampleDataArgs),
    /// Fit the Dirichlet posterior (`posterior.json`) and optionally sample `ensemble.bin`.
    FitPosterior(commands::FitPosteriorArgs),
    /// Solve with one method; writes `solution.json` (and `ambiguity_set.json` for robust methods).
    Solve(ConfigArgs<commands::SolveOverrides>),
    /// Evaluate a policy on a model ensemble; writes `evaluation.json` and `returns.csv`.
    Evaluate(ConfigArgs<commands::EvaluateOverrides>),
    /// Run the train/test protocol; writes `runs.csv`, `summary.csv`, `manifest.json`.
    RunExperiment(ConfigArgs<commands::ExperimentOverrides>),
    /// Tabulate the BCR-to-VaR radius ratio into `radius.csv`.
    RadiusAnalysis(commands::RadiusArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs<T: Args> {
    /// TOML configuration file.
    config: PathBuf,

    #[command(flatten)]
    overrides: T,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out_dir;
    let written = match cli.command {
        Command::GenerateDomain(args) => commands::generate_domain(&args, out)?,
        Command::SampleData(args) => commands::sample_data(&args, out)?,
        Command::FitPosterior(args) => commands::fit_posterior(&args, out)?,
        Command::Solve(args) => commands::solve(&args.config, &args.overrides, out)?,
        Command::Evaluate(args) => commands::evaluate(&args.config, &args.overrides, out)?,
        Command::RunExperiment(args) => commands::run_experiment(&args.config, &args.overrides, out)?,
        Command::RadiusAnalysis(args) => commands::radius_analysis(&args, out)?,
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                if !e.to_string().contains(&cause.to_string()) {
                    eprintln!("  caused by: {cause}");
                }
                source = cause.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
