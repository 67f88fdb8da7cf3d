//! `chd`: generate corpora, train the agent, evaluate and report.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "chd", version, about = "Coverage-hole detection workbench")]
struct Cli {
    /// Worker threads for corpus and evaluation stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic building maps and their manifest.
    GenMaps(GenMapsArgs),
    /// Place base stations and compute RSRP rasters for a map corpus.
    GenCoverage(GenCoverageArgs),
    /// Train the agent and write a checkpoint plus a per-episode log.
    Train(TrainArgs),
    /// Run the methods over a corpus and write precision/recall reports.
    Eval(EvalArgs),
    /// Rebuild the report files from an evaluation run log.
    Report(ReportArgs),
}

/// Flags override the `--config` file, which overrides the defaults. Config
/// keys are the flag names with `_` for `-`.
#[derive(Debug, Args)]
struct GenMapsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of maps.
    #[arg(long)]
    n: Option<usize>,
    /// Grid side length in cells.
    #[arg(long)]
    l: Option<usize>,
    /// Target occupied fraction.
    #[arg(long)]
    fill: Option<f64>,
    /// Base seed; map `i` uses `seed + i`. Falls back to `CHD_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Minimum free cells between buildings.
    #[arg(long)]
    street: Option<usize>,
    #[arg(long)]
    footprint_min: Option<usize>,
    #[arg(long)]
    footprint_max: Option<usize>,
    /// Meters per cell.
    #[arg(long)]
    resolution: Option<f64>,
    /// Flight altitude in meters.
    #[arg(long)]
    altitude: Option<f64>,
}

#[derive(Debug, Args)]
struct GenCoverageArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding `manifest.csv` and the maps.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Base-station seed; map `i` uses `seed + i`. Falls back to `CHD_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    /// RSRP one cell from the base station, dB.
    #[arg(long, allow_negative_numbers = true)]
    p0: Option<f64>,
    /// Path-loss exponent.
    #[arg(long)]
    exp: Option<f64>,
    /// Loss per building cell crossed, dB.
    #[arg(long)]
    wall_loss: Option<f64>,
    /// Maximum number of building cells that add loss.
    #[arg(long)]
    wall_cap: Option<usize>,
    /// Only buildings within this many cells of the receiver attenuate; `none`
    /// counts the whole ray.
    #[arg(long)]
    shadow_depth: Option<String>,
    /// Coverage-hole threshold, dB.
    #[arg(long, allow_negative_numbers = true)]
    eps_ch: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with maps and coverage.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV (default: `<out>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Falls back to `CHD_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint; the log is appended to.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps_ch: Option<f64>,
    #[arg(long)]
    step_limit: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    explore_start: Option<f64>,
    #[arg(long)]
    explore_end: Option<f64>,
    #[arg(long)]
    explore_steps: Option<u64>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    target_sync: Option<u64>,
    #[arg(long)]
    max_episode_len: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of rsp,bnp,grsp,gbnp,ddqn.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated step budgets.
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated start counts per map.
    #[arg(long)]
    n_sam: Option<String>,
    /// Agent checkpoint, required for `ddqn`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Falls back to `CHD_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step_limit: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    /// Building-neighbourhood radius in meters.
    #[arg(long)]
    d_b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps_ch: Option<f64>,
    /// Write every rollout to `<out>/trajectories/`.
    #[arg(long)]
    dump_trajectories: bool,
    /// Draw separate start cells for each method.
    #[arg(long)]
    independent_starts: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run log written by `eval`.
    #[arg(long)]
    run_log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::GenMaps(a) => commands::gen_maps(a),
        Command::GenCoverage(a) => commands::gen_coverage(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
