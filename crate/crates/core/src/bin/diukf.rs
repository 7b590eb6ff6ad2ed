use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use diukf::harness::{run_campaign, write_outputs, Algorithm, CampaignConfig};
use diukf::simworld::{write_trace, NoiseConfig, TrajectoryId, WorldTrace};

#[derive(Parser)]
#[command(name = "diukf", version, about = "Distributed invariant UKF tracking simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo campaign and write CSV results.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML file with campaign settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithms: diukf-ici, diekf-ici, diekf-ci (comma separated).
    #[arg(long, value_delimiter = ',')]
    algorithm: Vec<Algorithm>,
    /// Trajectory ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    traj: Vec<TrajectoryId>,
    /// Communication rates in percent (comma separated).
    #[arg(long = "comm-rate", value_delimiter = ',')]
    comm_rate: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Use the full trial count instead of the desk-scale default.
    #[arg(long, conflicts_with = "trials")]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds per trial.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Run the world without sensor noise or initial estimate error.
    #[arg(long)]
    zero_noise: bool,
    /// Write the world trace of trial 0 of the first cell to this file.
    #[arg(long)]
    export_trace: Option<PathBuf>,
}

fn build_config(args: &RunArgs) -> Result<CampaignConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            CampaignConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => CampaignConfig::default(),
    };
    if !args.algorithm.is_empty() {
        cfg.algorithms = args.algorithm.clone();
    }
    if !args.traj.is_empty() {
        cfg.trajectories = args.traj.clone();
    }
    if !args.comm_rate.is_empty() {
        cfg.rates = args.comm_rate.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if args.full {
        cfg.trials = CampaignConfig::FULL_TRIALS;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.duration {
        cfg.duration = d;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if args.zero_noise {
        cfg.noise = NoiseConfig::zero();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<bool, String> {
    let cfg = build_config(&args)?;
    if let Some(path) = &args.export_trace {
        let trace = WorldTrace::generate(cfg.trajectories[0], cfg.duration, cfg.trial_seed(0), &cfg.noise, cfg.rates[0]).map_err(|e| e.to_string())?;
        let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        write_trace(&trace, file).map_err(|e| e.to_string())?;
    }
    let start = Instant::now();
    let result = run_campaign(&cfg).map_err(|e| e.to_string())?;
    log::info!("campaign finished in {:.1} s", start.elapsed().as_secs_f64());

    println!("{:<10} {:>4} {:>6} {:>10} {:>10} {:>7}", "algorithm", "traj", "rate", "PRMSE[m]", "ORMSE[deg]", "failed");
    for c in &result.cells {
        println!("{:<10} {:>4} {:>6} {:>10.4} {:>10.4} {:>7}", c.cell.algorithm, c.cell.trajectory, c.cell.rate, c.prmse, c.ormse, c.failed);
    }
    if let Some(dir) = &cfg.out {
        write_outputs(&result, dir).map_err(|e| e.to_string())?;
    }
    let fired = result.monitor_fired();
    if fired {
        eprintln!("covariance bound monitor fired");
    }
    Ok(fired)
}

/// Exit status when a covariance monitor fired; usage errors exit with 2.
const MONITOR_EXIT: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(false) => ExitCode::SUCCESS,
            Ok(true) => ExitCode::from(MONITOR_EXIT),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
