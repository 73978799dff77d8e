use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use semcal_cli::commands::{self, Axis, Common};
use semcal_cli::config::Overrides;

/// Semantic LiDAR-camera extrinsic calibration.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Comma-separated class ids entering the cost.
    #[arg(long, global = true, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for RANSAC (init, calibrate) or scene generation (synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: current directory).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Record wall-clock timings in reports. Makes reports non-reproducible.
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known extrinsics.
    Synth {
        /// Scene spec (TOML); defaults apply when omitted.
        spec: Option<PathBuf>,
    },
    /// Initial extrinsics from semantic centroids.
    Init { data: PathBuf },
    /// Initialize (or read an initial guess) and refine.
    Calibrate {
        data: PathBuf,
        /// Start from this extrinsics file instead of the centroid initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Also write the optimizer trace as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Cost along one parameter around the ground truth.
    Sweep {
        data: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Half-range in degrees or meters (default 30 or 2).
        #[arg(long)]
        range: Option<f64>,
        /// Grid step in degrees or meters (default 0.01 or 0.005).
        #[arg(long)]
        step: Option<f64>,
    },
    /// Signed per-parameter errors of an estimate against ground truth.
    Eval { estimate: PathBuf, gt: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let common = Common {
        config: g.config,
        overrides: Overrides {
            classes: g.classes,
            seed: g.seed,
            threads: g.threads,
        },
        output: g.output,
        timings: g.timings,
    };
    let threads = common.config()?.threads;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring worker threads")?;

    match cli.command {
        Command::Synth { spec } => {
            let gt = commands::synth(spec.as_deref(), &common)?;
            println!("ground truth: {gt}");
        }
        Command::Init { data } => {
            let e = commands::init(&data, &common)?;
            println!("initial: {e}");
        }
        Command::Calibrate { data, init, trace } => {
            let r = commands::calibrate(&data, init.as_deref(), trace, &common)?;
            let e = r.estimate;
            println!(
                "estimate: theta = ({}, {}, {}) deg, t = ({}, {}, {}) m",
                e.theta_x_deg, e.theta_y_deg, e.theta_z_deg, e.tx_m, e.ty_m, e.tz_m
            );
            println!(
                "cost {} -> {} ({:?}, {} iterations)",
                r.initialization.cost, r.cost.total, r.trace.termination, r.trace.iterations
            );
        }
        Command::Sweep {
            data,
            gt,
            axis,
            range,
            step,
        } => {
            let path = commands::sweep(&data, &gt, axis, range, step, &common)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { estimate, gt } => {
            let r = commands::eval(&estimate, &gt, &common)?;
            print!("{}", r.errors.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
