mod commands;
mod config;
mod error;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use ambopt_core::heuristics::PolicyKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RuleName;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "ambopt", version, about = "Ambulance dispatch simulation and optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the configuration file and the
/// `AMBOPT_*` environment variables.
#[derive(Args, Debug, Default)]
pub struct RunFlags {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Dispatch policy; repeat for several.
    #[arg(long = "policy", value_parser = parse_policy)]
    pub policies: Vec<PolicyKind>,
    /// Rule choosing where a freed ambulance parks; repeat for several.
    #[arg(long = "base-rule")]
    pub base_rules: Vec<RuleName>,
    /// Look-ahead window of the bbr rule.
    #[arg(long)]
    pub delta_seconds: Option<f64>,
    /// Quantile level of the bbr demand forecast.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: ambopt_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run heuristic policies over replicated call sequences.
    Simulate(RunFlags),
    /// Compare each policy with and without rollout on the same replications.
    Rollout(RunFlags),
    /// Estimate a demand file from a history of calls.
    Calibrate(commands::CalibrateArgs),
    /// Solve a batch of waiting calls exactly.
    SolveBatch(commands::SolveBatchArgs),
    /// Home, closest and best base rules on a periodic burst instance.
    BbrDemo(commands::BbrDemoArgs),
    /// Write a self-contained example configuration to a directory.
    InitExample(commands::InitExampleArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // Help and version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::new("usage", e.render().to_string().trim_end()).to_json());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(f) => commands::experiment(&f, false),
        Command::Rollout(f) => commands::experiment(&f, true),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::SolveBatch(a) => commands::solve_batch(&a),
        Command::BbrDemo(a) => commands::bbr_demo(&a),
        Command::InitExample(a) => commands::init_example(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
