//! `sdc`: scaffolding, synthetic data, training, inference, evaluation and
//! plotting for sparse-to-dense depth completion.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. The
//! evaluation commands print one JSON object on stdout and a human-readable
//! table on stderr.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod plot;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "sdc", version, about = "Unsupervised depth completion from sparse depth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the piecewise-planar scaffold of sparse depth.
    Scaffold(ScaffoldArgs),
    /// Render a synthetic dataset with ground truth and true poses.
    Synth(SynthArgs),
    /// Train a depth completion network on a manifest.
    Train(TrainArgs),
    /// Refine the scaffold of one frame with a trained checkpoint.
    Infer(InferArgs),
    /// Depth error metrics of a prediction against ground truth.
    EvalDepth(EvalDepthArgs),
    /// Trajectory error metrics of an estimated trajectory.
    EvalPose(EvalPoseArgs),
    /// Chart of mean absolute error against ground-truth distance (SVG).
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ScaffoldArgs {
    /// Sparse depth (JSON point list or 16-bit depth PNG).
    #[arg(long, requires = "out", conflicts_with = "manifest")]
    sparse: Option<PathBuf>,
    /// Camera intrinsics JSON; when given, its size must match the sparse map.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Output 16-bit depth PNG. Pixels outside the triangulation hold the
    /// mean sparse depth.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional 8-bit PNG marking pixels inside the triangulation.
    #[arg(long)]
    hull_mask: Option<PathBuf>,
    /// Scaffold the sparse depth of every record of a manifest instead.
    #[arg(long, requires = "out_dir")]
    manifest: Option<PathBuf>,
    /// Output directory for `--manifest` mode (`NNNNN_scaffold.png`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for `--manifest` mode.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives the images, depth maps and `manifest.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of triplets.
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Scene configuration TOML (keys of the synthetic scene config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image width and height in pixels.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Fraction of pixels kept as sparse depth.
    #[arg(long)]
    density: Option<f64>,
    /// Render rooms without box occluders.
    #[arg(long)]
    occlusion_free: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Training config TOML (optimizer, schedule, weights, variant).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Preset: kitti, void or desk (default desk).
    #[arg(long)]
    preset: Option<String>,
    /// Loss-weight TOML overriding the config's weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads for loading and scaffolding.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where to write the diagnostic dump if the loss diverges
    /// (default: `<out>.diverged.json`).
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Print progress every N steps (0 disables).
    #[arg(long, default_value_t = 50)]
    progress: usize,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// RGB image PNG.
    #[arg(long)]
    image: PathBuf,
    /// Sparse depth (JSON point list or 16-bit depth PNG).
    #[arg(long)]
    sparse: PathBuf,
    /// Output 16-bit depth PNG.
    #[arg(long)]
    out: PathBuf,
    /// Optional 8-bit visualization (near = bright).
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalDepthArgs {
    /// Predicted depth PNG.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depth PNG; zero pixels are not evaluated.
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated distance bin edges in meters, e.g. `0,5,10,20`.
    #[arg(long)]
    bins: Option<String>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalPoseArgs {
    /// Estimated trajectory (`t tx ty tz r11 .. r33` per line).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory, same format and length.
    #[arg(long)]
    gt: PathBuf,
    /// Frame offset of the relative errors.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Fit a least-squares scale per 5-frame window.
    #[arg(long)]
    scaled_ate5f: bool,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Ground-truth depth PNG.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted depth PNGs, one series each.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    /// Series labels, in `--pred` order (default: file names).
    #[arg(long, num_args = 1..)]
    label: Vec<String>,
    /// Output SVG.
    #[arg(long)]
    out: PathBuf,
    /// Bin width in meters.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Upper end of the distance axis (default: largest ground truth).
    #[arg(long)]
    max_depth: Option<f64>,
    /// Also write the binned statistics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// The error chain, skipping causes already spelled out by their parent.
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

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Scaffold(a) => commands::scaffold(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::EvalDepth(a) => commands::eval_depth(a),
        Command::EvalPose(a) => commands::eval_pose(a),
        Command::Plot(a) => plot::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
