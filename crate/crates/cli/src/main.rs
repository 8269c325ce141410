//! `eventsteer` — plan event windows, solve steering strengths, and
//! verify span-local query steering on a synthetic attention stack.
//!
//! Exit codes are a stable contract:
//! - `0`: success;
//! - `1`: validation failure — bad flags, malformed JSON content,
//!   plan violations, infeasible geometry, out-of-range schedules;
//! - `2`: resource failure — unreadable/unwritable files, missing
//!   explicit config, network transport errors.
//!
//! Settings layer as flags > config file > built-ins. Without
//! `--config`, `config/default.json` is probed in the working directory
//! and silently skipped when absent.

mod commands;
mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::AnchorsArgs;
use crate::config::{FileConfig, FlagOverrides, ReportFormat, SolverArg};

/// Errors carried up to the process boundary, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the inputs were read but are not acceptable.
    Validation(String),
    /// Exit 2: a file or network resource could not be accessed.
    Resource(String),
}

#[derive(Parser)]
#[command(
    name = "eventsteer",
    version,
    about = "Event-window planning and span-local attention query steering"
)]
struct Cli {
    /// Config file (default: probe config/default.json).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a plan file and print its latent-frame window assignment.
    Plan {
        /// Plan JSON; defaults to the config file's "plan" entry.
        plan: Option<PathBuf>,
        /// Directory for spans.json (default: config "out", else "out").
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Solve one strength-instance file and print the strengths as JSON.
    Solve {
        /// Instance JSON: {"s_tgt": [...], "s_oth": [[...]], "margin_eps": e}.
        instance: PathBuf,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
    },
    /// Run the synthetic attention stack with and without steering and
    /// report per-span attention-mass changes.
    #[command(name = "steer-sim")]
    SteerSim {
        /// Scenario seed (overrides the config scenario's seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Run this many consecutive seeds and write one summary row each.
        #[arg(long, value_name = "N")]
        seeds: Option<u32>,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        /// Steer only the first N denoising steps.
        #[arg(long, value_name = "N")]
        steer_steps: Option<usize>,
        /// Steer only the first N attention blocks.
        #[arg(long, value_name = "N")]
        steer_blocks: Option<usize>,
        /// Disable steering in the "on" pass (its report must then equal
        /// the baseline).
        #[arg(long)]
        no_steering: bool,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
    },
    /// Fill a plan's anchor phrases and write the anchored plan copy.
    Anchors {
        /// Plan JSON with event texts (and a prompt, when it differs
        /// from the joined texts).
        plan: PathBuf,
        /// Take anchors from the plan file's own "anchors" fields
        /// (offline; no endpoint contacted).
        #[arg(long)]
        from_file: bool,
        /// Chat-completions endpoint URL (ignored with --from-file).
        #[arg(long, value_name = "URL")]
        endpoint: Option<String>,
        /// Model name sent to the endpoint.
        #[arg(long, value_name = "NAME")]
        model: Option<String>,
        /// Environment variable holding the bearer token.
        #[arg(long, value_name = "VAR")]
        token_var: Option<String>,
        /// Append one JSON line per extraction attempt to this file.
        #[arg(long, value_name = "PATH")]
        audit: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => {}
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Resource(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Plan { plan, out } => {
            let settings = config::resolve(&file, &FlagOverrides::default())?;
            commands::cmd_plan(plan.as_deref(), out.as_deref(), &settings)
        }
        Cmd::Solve { instance, solver } => {
            let flags = FlagOverrides {
                solver,
                ..FlagOverrides::default()
            };
            let settings = config::resolve(&file, &flags)?;
            commands::cmd_solve(&instance, &settings)
        }
        Cmd::SteerSim {
            seed,
            seeds,
            solver,
            steer_steps,
            steer_blocks,
            no_steering,
            out,
            format,
        } => {
            let flags = FlagOverrides {
                seed,
                seeds,
                solver,
                steer_steps,
                steer_blocks,
                out,
                format,
            };
            let settings = config::resolve(&file, &flags)?;
            commands::cmd_steer_sim(&settings, no_steering)
        }
        Cmd::Anchors {
            plan,
            from_file,
            endpoint,
            model,
            token_var,
            audit,
            out,
        } => {
            let settings = config::resolve(&file, &FlagOverrides::default())?;
            let args = AnchorsArgs {
                plan,
                from_file,
                endpoint,
                model,
                token_var,
                audit,
                out,
            };
            commands::cmd_anchors(&args, &settings)
        }
    }
}
