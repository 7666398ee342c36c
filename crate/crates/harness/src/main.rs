use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deeprat_harness::recipes::{self, ExperimentRecipe, Overrides, RecipeKind};
use deeprat_harness::summarize::{self, SummaryOptions};
use log::error;

/// Hierarchical DQN/DDPG multi-RAT assignment and power allocation.
///
/// Log verbosity is read from DEEPRAT_LOG (e.g. `info`, `debug`).
#[derive(Parser)]
#[command(name = "deeprat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-episode training metrics plus a checkpoint.
    Train(RecipeArgs),
    /// Greedy evaluation with assignment and rate-share matrices.
    Evaluate(RecipeArgs),
    /// One evaluation stream per scheme.
    Baselines(RecipeArgs),
    /// Training under periodic mobility shocks with per-segment convergence.
    Mobility(RecipeArgs),
    /// Sorted utility samples per scheme.
    Cdf(RecipeArgs),
    /// Training and evaluation for every configured k_inner.
    Sweep(RecipeArgs),
    /// Per-run and cross-seed tables over an output directory.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RecipeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    shock_period: Option<usize>,
    #[arg(long)]
    k_inner: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    window: usize,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEEPRAT_LOG", "info")).init();
    let cli = Cli::parse();
    let (kind, a) = match cli.command {
        Command::Summarize(s) => {
            if s.window == 0 {
                error!("--window must be at least 1");
                return ExitCode::from(2);
            }
            let opts = SummaryOptions {
                window: s.window,
                tolerance: s.tolerance,
            };
            return match summarize::write_summary(&s.out, opts) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    error!("{}: {e}", s.out.display());
                    ExitCode::from(1)
                }
            };
        }
        Command::Train(a) => (RecipeKind::Train, a),
        Command::Evaluate(a) => (RecipeKind::Evaluate, a),
        Command::Baselines(a) => (RecipeKind::Baselines, a),
        Command::Mobility(a) => (RecipeKind::Mobility, a),
        Command::Cdf(a) => (RecipeKind::Cdf, a),
        Command::Sweep(a) => (RecipeKind::Sweep, a),
    };
    let recipe = ExperimentRecipe {
        kind,
        config_path: a.config,
        out: a.out,
        seeds: a.seeds,
        overrides: Overrides {
            episodes: a.episodes,
            shock_period: a.shock_period,
            k_inner: a.k_inner,
        },
    };
    match recipes::run(&recipe) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
