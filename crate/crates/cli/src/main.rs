use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "oscphase", version, about = "Phase estimation and closed-loop synchronization experiments")]
pub struct Cli {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Global seed. Overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory for this run.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and label the synthetic trajectory corpus.
    Gen(GenArgs),
    /// Calibrate one trajectory CSV.
    Calibrate(CalibrateArgs),
    /// Ground-truth phase labels for one trajectory CSV.
    Label(InputArgs),
    /// Train the phase estimator on a generated corpus.
    Train(TrainArgs),
    /// Estimate phases along one trajectory.
    Infer(InferArgs),
    /// Score the estimator on a labeled split.
    Evaluate(EvaluateArgs),
    /// Turn a phase series (or a simulated network) into marker motion.
    Synth(SynthArgs),
    /// Simulate the oscillator network without control.
    Sim(SimArgs),
    /// Train the synchronization agent.
    RlTrain,
    /// Closed-loop comparison of true and estimated phase observation.
    RlEval(RlEvalArgs),
    /// Consolidate finished runs into plot-ready files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of trajectories (overrides the config).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Trajectory CSV with columns t,x,y,z.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Fit from the first N samples instead of the whole trajectory.
    #[arg(long, value_name = "N")]
    pub buffer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Estimator weights written by `train`.
    #[arg(long, value_name = "PATH")]
    pub weights: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Feed samples one at a time through streaming calibration.
    #[arg(long)]
    pub online: bool,
    /// Calibration buffer in samples (defaults to the config value when online).
    #[arg(long, value_name = "N")]
    pub buffer: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub weights: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Streaming calibration from the first N samples of each trajectory.
    #[arg(long, value_name = "N")]
    pub buffer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Phase CSV with columns t,theta. Without it, every oscillator of a
    /// simulated network is synthesized.
    #[arg(long, value_name = "PATH")]
    pub phases: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Named coupling preset: group1 or group2.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    True,
    Estimated,
    Both,
}

#[derive(Debug, Args)]
pub struct RlEvalArgs {
    /// Agent weights written by `rl-train`.
    #[arg(long, value_name = "PATH")]
    pub qnet: PathBuf,
    /// Estimator weights; required for the estimated mode.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Calibration buffer in samples.
    #[arg(long, value_name = "N")]
    pub buffer: Option<usize>,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run manifests (run_manifest.json) or run directories.
    #[arg(required = true, value_name = "RUN")]
    pub runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 config, 3 bad data, 4 manifest or missing artifacts, 5 I/O and file
/// format errors.
fn exit_code(e: &oscphase::Error) -> u8 {
    use oscphase::Error::*;
    match e {
        InvalidConfig(_) => 2,
        InvalidInput(_)
        | ShapeMismatch { .. }
        | TooShort { .. }
        | DegenerateAxis(_)
        | DegenerateTrajectory
        | DegenerateSignal
        | DegeneratePhase
        | DegenerateReference(_)
        | InvalidCache => 3,
        InvalidManifest(_) | MissingArtifacts(_) => 4,
        Io { .. } | Format { .. } => 5,
    }
}
