use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::report::ReportFormat;

#[derive(Debug, Parser, Serialize)]
#[command(name = "attnprint", version, about = "Provenance checks for transformer attention weights")]
pub struct Cli {
    /// Print the resolved configuration as one JSON line on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,

    /// Default dimensions: `toy` uses n_f = 4, h = 8; `paper` uses n_f = 8, h = 256.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Toy)]
    pub profile: Profile,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Paper,
}

impl Profile {
    pub fn n_f(self) -> usize {
        match self {
            Profile::Toy => 4,
            Profile::Paper => 8,
        }
    }

    pub fn h(self) -> usize {
        match self {
            Profile::Toy => 8,
            Profile::Paper => 256,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Extract a fingerprint from a model directory.
    Extract(ExtractArgs),
    /// Print the fingerprint distance between two fingerprint files.
    Compare(CompareArgs),
    /// Apply a weight-space attack and write the attacked model.
    Attack(AttackArgs),
    /// Build a labeled training corpus from target, related and unrelated models.
    Augment(AugmentArgs),
    /// Train a similarity network on a corpus.
    Train(TrainArgs),
    /// Score a suspect fingerprint and write a report.
    Verify(VerifyArgs),
    /// Run the genetic token search against the input-dependent baseline.
    FalseClaim(FalseClaimArgs),
    /// Sweep fingerprint margins over windows, subsets and sizes.
    Ablate(AblateArgs),
    /// Write a synthetic model, or a perturbed offspring of one.
    Toy(ToyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Dims {
    /// Number of leading layers fingerprinted.
    #[arg(long)]
    pub nf: Option<usize>,
    /// Spectral values kept per row.
    #[arg(long)]
    pub h: Option<usize>,
}

impl Dims {
    pub fn resolve(&self, profile: Profile) -> (usize, usize) {
        (self.nf.unwrap_or(profile.n_f()), self.h.unwrap_or(profile.h()))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub dims: Dims,
    /// First layer of the window.
    #[arg(long, default_value_t = 0)]
    pub layer_start: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKindArg {
    Permute,
    Linmap,
    Combined,
    Finetune,
    Prune,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub kind: AttackKindArg,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fresh linear maps per layer (linmap only).
    #[arg(long)]
    pub per_layer: bool,
    /// Where to write the replayable attack record (permute/linmap/combined).
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Fingerprint to move away from (finetune); defaults to the model's own.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub l1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    /// Optimize the attack loss alone.
    #[arg(long)]
    pub no_data_loss: bool,
    /// Let every layer move, not only the fingerprinted ones.
    #[arg(long)]
    pub all_layers: bool,
    /// CSV of the per-step trajectory (finetune).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Fraction of residual dimensions removed (prune).
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanArg {
    Desk,
    Paper,
    None,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, num_args = 1..)]
    pub related: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub unrelated: Vec<PathBuf>,
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, value_enum, default_value_t = PlanArg::Desk)]
    pub plan: PlanArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthsArg {
    Desk,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Channel widths; defaults to `desk` under the toy profile and `full` otherwise.
    #[arg(long, value_enum)]
    pub widths: Option<WidthsArg>,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Mini-batch size; the whole corpus when omitted.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// CSV of per-epoch loss and accuracy.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub simnet: PathBuf,
    /// Suspect fingerprint.
    #[arg(long)]
    pub fingerprint: PathBuf,
    /// Target fingerprint; defaults to `target.fp` inside the checkpoint.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Record the creation time in the report.
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FalseClaimArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long, default_value_t = 8)]
    pub length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mutation_rate: f64,
    #[arg(long, default_value_t = 2)]
    pub elitism: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV of per-generation fitness.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, num_args = 1..)]
    pub related: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub unrelated: Vec<PathBuf>,
    /// Values of h to sweep.
    #[arg(long, num_args = 1.., default_values_t = vec![2, 4, 8])]
    pub h_values: Vec<usize>,
    /// Values of n_f to sweep.
    #[arg(long, num_args = 1..)]
    pub nf_values: Vec<usize>,
    /// CSV with one row per grid cell.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Derive an offspring of this model instead of generating a fresh one.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Relative noise of the offspring.
    #[arg(long, default_value_t = 0.01)]
    pub scale: f64,
    /// I.i.d. Gaussian entries instead of structured spectra.
    #[arg(long)]
    pub iid: bool,
}
