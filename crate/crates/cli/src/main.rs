use std::path::PathBuf;
use std::process::ExitCode;

use amgqp::exec::{with_jobs, Execution};
use amgqp::harness::{cmd_compare, cmd_front, cmd_run, ExperimentConfig};
use amgqp::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "amgqp", version, about = "Multiobjective accelerated gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method from every start and write one trace CSV each.
    Run(Common),
    /// Median iterations and seconds to reach residual thresholds.
    Compare(Common),
    /// Nondominated objective values after a fixed number of iterations.
    Front {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 25)]
        k_snapshot: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn load(common: &Common) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| format!("cannot read {}: {e}", common.config.display()))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.resolve().map_err(|e| e.to_string())?;
    Ok(config)
}

fn failure_code(err: &Error) -> u8 {
    match err {
        Error::InvalidSpec(_) | Error::InvalidInput(_) | Error::Json(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, k_snapshot) = match &cli.command {
        Command::Run(c) | Command::Compare(c) => (c, None),
        Command::Front { common, k_snapshot } => (common, Some(*k_snapshot)),
    };
    let config = match load(common) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let exec = Execution::default();
    let outcome = with_jobs(common.jobs, || match &cli.command {
        Command::Run(_) => cmd_run(&config, exec).map(|o| o.failures),
        Command::Compare(_) => cmd_compare(&config, exec).map(|o| {
            print!("{}", o.text);
            o.failures
        }),
        Command::Front { .. } => cmd_front(&config, k_snapshot.unwrap_or(25), exec).map(|o| o.failures),
    });

    match outcome {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("{} (method {}) start {}: {}", f.method.name(), f.method_index, f.start, f.error);
            }
            ExitCode::from(EXIT_SOLVER)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(failure_code(&err))
        }
    }
}
