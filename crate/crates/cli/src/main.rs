use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ipm_tmle_cli::config::ExperimentConfig;
use ipm_tmle_cli::summary::SummaryRow;
use ipm_tmle_cli::{analyze, gen_data, oracle_check, simulate, CliError, CliResult, Overrides};

#[derive(Parser)]
#[command(name = "ipm-tmle", version, about = "Targeted estimation for discretized integral projection models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism; env IPM_TMLE_THREADS)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (env IPM_TMLE_OUT)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate a target on one dataset
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Data file, overriding the configuration's `input`
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Compare closed-form influence functions with finite differences
    OracleCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write one simulated dataset and its true target values
    GenData {
        #[command(flatten)]
        common: Common,
        /// Replication index
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
}

fn overrides(c: &Common) -> CliResult<Overrides> {
    Overrides { seed: c.seed, out: c.out.clone(), threads: c.threads }.with_env()
}

fn required(c: &Common) -> CliResult<&PathBuf> {
    c.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<14}{:>10}{:>7}{:>10}{:>13}{:>12}{:>11}{:>11}", "method", "bandwidth", "reps", "coverage", "mean", "bias", "sd", "rmse");
    for r in rows {
        println!(
            "{:<14}{:>10}{:>7}{:>10.3}{:>13.6}{:>12.2e}{:>11.2e}{:>11.2e}",
            r.method, r.bandwidth, r.n_reps, r.coverage, r.mean_estimate, r.bias, r.sd, r.rmse
        );
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common } => {
            let ov = overrides(&common)?;
            let exp = ExperimentConfig::load(required(&common)?, &ov)?;
            let report = simulate::run(&exp)?;
            println!("truth {}", report.truth);
            print_summary(&report.summary);
            if report.n_failures > 0 {
                eprintln!("{} of {} runs failed; see failures.csv", report.n_failures, report.n_runs);
            }
            println!("wrote {}", report.output.display());
        }
        Command::Analyze { common, input } => {
            let ov = overrides(&common)?;
            let report = analyze::run(required(&common)?, input.as_deref(), &ov)?;
            print!("{}", analyze::render(&report));
        }
        Command::OracleCheck { common } => {
            let ov = overrides(&common)?;
            let rows = oracle_check::run(common.config.as_deref(), &ov)?;
            print!("{}", oracle_check::render(&rows));
            if !oracle_check::all_pass(&rows) {
                return Err(CliError::Numeric("influence functions disagree with the oracle".into()));
            }
        }
        Command::GenData { common, rep } => {
            let ov = overrides(&common)?;
            let path = gen_data::run(required(&common)?, rep, &ov)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
