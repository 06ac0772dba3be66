mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gausskey_core::synthetic::{CovarianceMode, TrajectoryKind};

#[derive(Parser, Debug)]
#[command(
    name = "gausskey",
    version,
    about = "Gaussian landmark sequences: synthesize, fit, render, interpolate, train, predict, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic landmark trajectories.
    Synth(SynthArgs),
    /// Fit Gaussians to activation maps stored as PGM frames.
    Fit(FitArgs),
    /// Render a state sequence to heatmap frames.
    Render(RenderArgs),
    /// Interpolate between two frames of a state sequence.
    Interp(InterpArgs),
    /// Train the residual LSTM on state sequences.
    Train(TrainArgs),
    /// Roll a trained model forward from seed frames.
    Predict(PredictArgs),
    /// Compare a predicted sequence with a reference.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Linear,
    Lissajous,
    Pendulum,
}

impl From<Kind> for TrajectoryKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Linear => TrajectoryKind::Linear,
            Kind::Lissajous => TrajectoryKind::Lissajous,
            Kind::Pendulum => TrajectoryKind::Pendulum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Cov {
    Fixed,
    Breathing,
    Rotating,
}

impl From<Cov> for CovarianceMode {
    fn from(c: Cov) -> Self {
        match c {
            Cov::Fixed => CovarianceMode::Fixed,
            Cov::Breathing => CovarianceMode::Breathing,
            Cov::Rotating => CovarianceMode::Rotating,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Normalize {
    /// Softmax with `--temperature`.
    Softmax,
    /// Divide nonnegative maps by their sum.
    Sum,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "linear")]
    kind: Kind,
    /// Landmarks per frame.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Frames per sequence.
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of Gaussian noise on the means.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, value_enum, default_value = "fixed")]
    covariance: Cov,
    /// Linear trajectories: maximum per-frame displacement.
    #[arg(long, default_value_t = gausskey_core::synthetic::DEFAULT_LINEAR_SPEED)]
    speed: f64,
    /// Number of sequences.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    /// Also write square heatmap frames of this size.
    #[arg(long)]
    render: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// A frame directory (`part_<k>.pgm`) or a directory of frame directories.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = gausskey_core::state::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = gausskey_core::state::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, value_enum, default_value = "softmax")]
    normalize: Normalize,
    /// Output state CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct RenderArgs {
    /// State CSV.
    #[arg(long)]
    input: PathBuf,
    /// Grid width and height.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    size: u64,
    /// Added to singular covariances before rendering.
    #[arg(long, default_value_t = gausskey_core::state::DEFAULT_EPS)]
    eps: f64,
    /// Output directory, one `frame_<t>` subdirectory per frame.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct InterpArgs {
    /// State CSV holding the endpoints.
    #[arg(long)]
    input: PathBuf,
    /// Start frame index (default first).
    #[arg(long)]
    from: Option<usize>,
    /// End frame index (default last).
    #[arg(long)]
    to: Option<usize>,
    /// Output frames, endpoints included.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(2..))]
    steps: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// State CSV files or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    n_inputs: u64,
    #[arg(long, default_value_t = 10)]
    m_future: u64,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    layers: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    hidden: u64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 5e-6)]
    weight_decay: f64,
    /// Global gradient norm cap; 0 disables clipping.
    #[arg(long, default_value_t = gausskey_core::dynamics::DEFAULT_GRAD_CLIP)]
    grad_clip: f64,
    /// Rotate each training window by a random angle about the origin.
    #[arg(long)]
    augment: bool,
    /// Checkpoint path; the loss curve goes to `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// State CSV with the seed frames.
    #[arg(long)]
    seeds: PathBuf,
    /// Use only the first N frames of the seed CSV.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    horizon: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Predicted state CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Reference state CSV.
    #[arg(long)]
    reference: PathBuf,
    /// Render size for the image metrics.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(11..))]
    size: u64,
    /// Skip this many leading frames (e.g. the seed frames).
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Render(a) => commands::render(a),
        Command::Interp(a) => commands::interp(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
