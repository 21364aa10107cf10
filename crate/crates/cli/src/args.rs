use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curvewalk::walk::PolicyKind;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "curvewalk", version, about = "Curve grouping networks for point clouds")]
pub struct Cli {
    /// Worker threads (falls back to CURVEWALK_THREADS, then all cores).
    #[arg(long, global = true, env = "CURVEWALK_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network and write checkpoints and per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the data of its run.
    Eval(EvalArgs),
    /// Finite-difference gradient checks for every operator and composite.
    Gradcheck(GradcheckArgs),
    /// Travel distance, revisit and channel-variance statistics of curves.
    AnalyzeCurves(AnalyzeArgs),
    /// Forward latency with curves on and off.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two single-block groups (64 and 128 channels).
    Desk,
    /// Half-width two-group network.
    Toy,
    /// Eight blocks in four groups.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classify,
    Normals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Cosine,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    None,
    Batch,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// `synth` for generated shapes or a dataset root laid out as
    /// `root/<class>/{train,test}/*.off`.
    #[arg(long, default_value = "synth")]
    pub data: String,
    /// Comma-separated classes (shape names for `synth`).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Points per cloud.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Synthetic training clouds per class.
    #[arg(long, default_value_t = 50)]
    pub train_per_class: usize,
    /// Synthetic test clouds per class.
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    /// Seed of the synthetic shapes.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub config: Preset,
    #[arg(long, value_enum, default_value_t = Task::Classify)]
    pub task: Task,
    /// `n,l@g1,g2,...` (curves of n walks, l states, in the listed 1-based
    /// groups) or `none`.
    #[arg(long)]
    pub curves: Option<String>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    /// Crossover suppression threshold angle in degrees.
    #[arg(long, default_value_t = 90.0)]
    pub theta_bar: f64,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Hidden width of the classification head.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = NormArg::None)]
    pub norm: NormArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr_floor: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Disable random scale/shift augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Prediction votes for the final evaluation.
    #[arg(long, default_value_t = 1)]
    pub votes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`; its run manifest is read from the
    /// same directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub votes: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Seed of the voting rescales (defaults to the run seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Comma-separated targets to run instead of the whole suite.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<String>>,
    /// Print the target names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Trained checkpoint; without it every seed draws a fresh random
    /// stem and walk policy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_policy, default_value = "momentum+cs")]
    pub policy: PolicyKind,
    /// Policy initialisations (random mode) or clouds (checkpoint mode).
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// Synthetic shape the curves walk on.
    #[arg(long, default_value = "sphere")]
    pub shape: String,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Seed of the (first) cloud.
    #[arg(long, default_value_t = 0)]
    pub cloud_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub l: usize,
    /// Feature width of the random stem.
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 90.0)]
    pub theta_bar: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

/// `n,l@groups` or `none`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvesFlag {
    pub n: usize,
    pub l: usize,
    pub groups: Vec<usize>,
}

pub fn parse_curves(s: &str) -> Result<Option<CurvesFlag>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (nl, groups) = s.split_once('@').ok_or_else(|| format!("'{s}': expected n,l@groups or none"))?;
    let (n, l) = nl.split_once(',').ok_or_else(|| format!("'{nl}': expected n,l"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a count"));
    let (n, l) = (num(n)?, num(l)?);
    let groups = groups.split([',', '+']).map(num).collect::<Result<Vec<_>, _>>()?;
    if n == 0 || l == 0 || groups.is_empty() || groups.contains(&0) {
        return Err(format!("'{s}': counts and groups must be positive"));
    }
    Ok(Some(CurvesFlag { n, l, groups }))
}
