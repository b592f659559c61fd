use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cepmc_harness::config::PROBLEM_IDS;
use cepmc_harness::{
    parse_config, plot_data_from, run_experiment, write_outputs, HarnessError, Method, RunOptions,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Rare-event estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every problem/method/rho cell of an experiment file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replications per cell (overrides the file)
        #[arg(long)]
        reps: Option<usize>,
        /// Master seed (overrides the file)
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the file)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it
        #[arg(long)]
        threads: Option<usize>,
        /// Use the file's paper_replications
        #[arg(long)]
        full: bool,
        /// Write 0 for runtime so reruns are byte-identical
        #[arg(long)]
        no_timing: bool,
    },
    /// Problem identifiers accepted in [problem] id
    ListProblems,
    /// Method names accepted in [method] name
    ListMethods,
    /// Write plot data for a finished run directory
    PlotData {
        #[arg(long)]
        from: PathBuf,
    },
}

fn exit_code(e: &HarnessError) -> ExitCode {
    match e {
        HarnessError::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            config,
            reps,
            seed,
            out,
            threads,
            full,
            no_timing,
        } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| crate_config_error(format!("{}: {e}", config.display())))?;
            let spec = parse_config(&text)?;
            let options = RunOptions {
                replications: reps,
                seed,
                threads,
                full,
                no_timing,
            };
            let output = run_experiment(&spec, &options)?;
            let dir = out.unwrap_or_else(|| spec.output.clone());
            for path in write_outputs(&spec, &output, &dir)? {
                println!("{}", path.display());
            }
            let failures: usize = output.summaries.iter().map(|s| s.failures).sum();
            if failures > 0 {
                eprintln!("{failures} replication(s) failed; see the error column");
            }
        }
        Command::ListProblems => {
            for (id, text) in PROBLEM_IDS {
                println!("{id:<12} {text}");
            }
        }
        Command::ListMethods => {
            for m in Method::ALL {
                println!("{:<12} {}", m.as_str(), m.describe());
            }
        }
        Command::PlotData { from } => {
            for path in plot_data_from(&from)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn crate_config_error(message: String) -> HarnessError {
    HarnessError::Config(cepmc_harness::ConfigError {
        line: None,
        message,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
