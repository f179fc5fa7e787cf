//! `ncs`: stability certification and simulation of networked control loops.
//!
//! Exit status: 0 on success, 1 when the analysis finds a problem (not
//! certified, sampled violations, unsettled runs), 2 on input errors.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::Outcome;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl From<ncs_core::Error> for CliError {
    fn from(e: ncs_core::Error) -> Self {
        match e {
            ncs_core::Error::Numeric(_) => CliError::Failed(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ncs", version, about = "Delay-bound certification for networked nonlinear control loops")]
#[command(after_help = config::CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (required except for `report`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace a config value, e.g. `analysis.delays=[0,0,0,0]`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Synthesize the quadratic Lyapunov certificate of the error dynamics.
    SynthLyapunov,
    /// Estimate the delay sensitivity matrices M1..M4 by sampling.
    EstimateMk,
    /// Audit the bound matrices against the robot on the state domain.
    VerifyAssumptions,
    /// Check the stability LMIs at `analysis.control_cycle`.
    Analyze,
    /// Bisect the largest certified control cycle.
    Bound,
    /// Simulate the robot over a lossy, delayed network.
    Simulate,
    /// Write the stability LMIs in SDPA sparse format.
    ExportSdpa,
    /// Rebuild report.json from stored sections.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SynthLyapunov => "synth-lyapunov",
            Command::EstimateMk => "estimate-mk",
            Command::VerifyAssumptions => "verify-assumptions",
            Command::Analyze => "analyze",
            Command::Bound => "bound",
            Command::Simulate => "simulate",
            Command::ExportSdpa => "export-sdpa",
            Command::Report => "report",
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::Report = cli.command {
        let out = match (&cli.out, &cli.config) {
            (Some(out), _) => out.clone(),
            (None, Some(path)) => config::load_config(path, &cli.overrides)?.resolved_output,
            (None, None) => return Err(CliError::Input("report needs --out or --config".into())),
        };
        commands::rebuild_report(&out)?;
        return Ok(Outcome::Clean);
    }

    let path = cli.config.as_ref().ok_or_else(|| CliError::Input("--config is required".into()))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = config::load_config(path, &overrides)?;
    if let Some(out) = &cli.out {
        cfg.resolved_output = out.clone();
    }
    let out = cfg.resolved_output.clone();
    log::info!("{} -> {}", cli.command.name(), out.display());

    let (section, outcome) = match cli.command {
        Command::SynthLyapunov => commands::synth_lyapunov(&cfg)?,
        Command::EstimateMk => commands::estimate(&cfg, &out)?,
        Command::VerifyAssumptions => commands::verify(&cfg)?,
        Command::Analyze => commands::analyze(&cfg)?,
        Command::Bound => commands::bound(&cfg, &out)?,
        Command::Simulate => commands::simulate(&cfg, &out)?,
        Command::ExportSdpa => commands::export(&cfg, &out)?,
        Command::Report => unreachable!("handled above"),
    };
    commands::store_section(&out, cli.command.name(), &section, &cfg)?;
    commands::rebuild_report(&out)?;
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NCS_LOG", "error")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Finding(msg)) => {
            eprintln!("ncs {}: {msg}", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("ncs {}: error: {e}", cli.command.name());
            ExitCode::from(match e {
                CliError::Input(_) => 2,
                CliError::Failed(_) => 1,
            })
        }
    }
}
