//! `motionforge`: dataset synthesis, preprocessing, training, generation,
//! evaluation and plotting.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "motionforge", version, about = "Attention WGAN-GP motion synthesis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural motion dataset as Motion CSV clips.
    SynthData(SynthDataArgs),
    /// Segment, window and normalize a clip directory.
    Preprocess(PreprocessArgs),
    /// Adversarial training on a preprocessed dataset.
    Train(TrainArgs),
    /// Autoregressive rollouts from a checkpoint.
    Generate(GenerateArgs),
    /// Cross-validated action classification with and without synthetic data.
    Evaluate(EvaluateArgs),
    /// Render a losses.csv or curves.csv file as SVG.
    Plot(PlotArgs),
}

#[derive(clap::Args, Debug)]
pub struct SynthDataArgs {
    #[arg(long, default_value_t = 6)]
    pub subjects: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Windows per subject for knock, lift, throw, walk.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 88, 64, 80])]
    pub windows: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct PreprocessArgs {
    /// Dataset directory (clips in `clips/` or at the top level).
    #[arg(long)]
    pub data: PathBuf,
    /// Skeleton spec; defaults to `<data>/skeleton.txt`, then the built-in skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Widths {
    /// Narrow networks for single-core runs.
    Desk,
    /// Full-width networks.
    Full,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Preprocessed dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `epochs` from the config file.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Outer loops per epoch; derived from the dataset size by default.
    #[arg(long)]
    pub loops_per_epoch: Option<usize>,
    #[arg(long, value_enum, default_value_t = Widths::Desk)]
    pub widths: Widths,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_blend_loss: bool,
    #[arg(long)]
    pub no_skeleton_loss: bool,
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Preprocessed dataset supplying seed windows.
    #[arg(long)]
    pub data: PathBuf,
    /// One or more of knock, lift, throw, walk.
    #[arg(long, value_delimiter = ',', required = true)]
    pub action: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub iterations: usize,
    #[arg(long)]
    pub drop_seed: bool,
    /// Which window of the requested action seeds the rollout.
    #[arg(long, default_value_t = 0)]
    pub seed_index: usize,
    /// Draw every n-th frame in the SVG strip.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Loso,
    Kfold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Real,
    Augmented,
    Synthetic,
    /// Real-only and real+synthetic.
    Both,
    All,
}

#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    /// Preprocessed dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Generator checkpoint; required for synthetic conditions.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Protocol::Loso)]
    pub protocol: Protocol,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Fractions of each training fold to keep, in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = [0.1])]
    pub fraction: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ConditionArg::Both)]
    pub condition: ConditionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Classifier training epochs per fold.
    #[arg(long, default_value_t = 30)]
    pub classifier_epochs: usize,
    /// Frames of the angle-error curve written with a checkpoint.
    #[arg(long, default_value_t = 70)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct PlotArgs {
    /// A losses.csv (`step,phase,component,value`) or curves.csv file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
