//! `matmvp`: dataset generation, training, sampling, relighting, evaluation
//! and the two ablation experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "matmvp", version, about = "Multi-view PBR material diffusion at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Directory receiving every output of the command.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// TOML config for the subcommand. train/ablate: training config with an
    /// optional `[eval]` table; sample/eval: evaluation config; gen-data:
    /// dataset config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Config override `dotted.key=value`, applied after the file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Base seed; replaces the seed in the config.
    #[arg(long, global = true, env = "MATMVP_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for data generation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset.
    GenData {
        #[arg(long)]
        scenes: Option<usize>,
        /// Scenes held out for evaluation (default: a fifth).
        #[arg(long)]
        heldout: Option<usize>,
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        azimuths: Option<usize>,
    },
    /// Train a denoiser on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint (its config wins over --config).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate maps for every target view of one scene from one reference.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene index or id (`scene_0003`).
        #[arg(long)]
        scene: String,
        /// Reference image inside the scene, e.g. `e0_a90/rgb_env1.png`.
        #[arg(long = "ref")]
        reference: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        elevation: f64,
        /// Azimuth of the first target view.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        offset: f64,
    },
    /// Shade material maps of one view under new lights.
    Relight {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        /// View key, e.g. `e0_a90`.
        #[arg(long)]
        view: String,
        /// Directory holding `albedo.png` and `mr.png` (default: ground truth).
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Lighting tags such as `env1` or `pt_30_45` (default: the view's
        /// stored lightings).
        #[arg(long = "lighting", allow_hyphen_values = true)]
        lightings: Vec<String>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Heldout)]
        split: SplitArg,
        /// Evaluate only the first N scenes of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Twin trainings, baseline against one ablation, plus a comparison.
    Ablate {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Heldout,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Consistency,
    Mcaa,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
