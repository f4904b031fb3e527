use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pkb::{KernelSpec, OutcomeType, PenaltyKind, SimModel};

#[derive(Debug, Parser)]
#[command(name = "pkb", version, about = "Pathway-based kernel boosting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model; the number of iterations is chosen by cross-validation.
    Train(TrainArgs),
    /// Score new samples with a fitted model.
    Predict(PredictArgs),
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
    /// Grid search over kernel, learning rate and penalty multiplier.
    Tune(TuneArgs),
    /// Score a prediction file against observed outcomes.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutcomeArg {
    Regression,
    Classification,
    Survival,
}

impl From<OutcomeArg> for OutcomeType {
    fn from(o: OutcomeArg) -> Self {
        match o {
            OutcomeArg::Regression => OutcomeType::Regression,
            OutcomeArg::Classification => OutcomeType::Classification,
            OutcomeArg::Survival => OutcomeType::Survival,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimOutcomeArg {
    Regression,
    Survival,
}

impl From<SimOutcomeArg> for OutcomeType {
    fn from(o: SimOutcomeArg) -> Self {
        match o {
            SimOutcomeArg::Regression => OutcomeType::Regression,
            SimOutcomeArg::Survival => OutcomeType::Survival,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Poly3,
}

impl From<KernelArg> for KernelSpec {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Rbf => KernelSpec::rbf(),
            KernelArg::Poly3 => KernelSpec::polynomial(3),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    L1,
    L2,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::L1 => PenaltyKind::L1,
            PenaltyArg::L2 => PenaltyKind::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
}

impl From<ModelArg> for SimModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::One => SimModel::M1,
            ModelArg::Two => SimModel::M2,
            ModelArg::Three => SimModel::M3,
        }
    }
}

/// Input files shared by `train` and `tune`.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Expression CSV: sample id column, then one column per gene.
    #[arg(long)]
    pub expression: PathBuf,
    /// Clinical CSV: sample id column, then numeric or categorical columns.
    #[arg(long)]
    pub clinical: Option<PathBuf>,
    /// Outcome CSV: (sample, y), (sample, time, status) or (sample, label).
    #[arg(long)]
    pub outcome: PathBuf,
    /// Pathways in GMT format.
    #[arg(long)]
    pub pathways: PathBuf,
    #[arg(long, value_enum)]
    pub outcome_type: OutcomeArg,
    /// CSV of (gene, weight) pairs; enables the weighted kernels.
    #[arg(long)]
    pub gene_weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l2")]
    pub penalty: PenaltyArg,
    #[arg(long, default_value_t = 1500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub penalty_multiplier: f64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long = "kernel", value_enum, value_delimiter = ',', default_values_t = [KernelArg::Rbf, KernelArg::Poly3])]
    pub kernels: Vec<KernelArg>,
    #[arg(long = "learning-rate", value_delimiter = ',', default_values_t = [0.01, 0.05])]
    pub learning_rates: Vec<f64>,
    #[arg(long = "penalty-multiplier", value_delimiter = ',', default_values_t = [0.04, 0.2, 1.0])]
    pub penalty_multipliers: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `train` or `tune`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub expression: PathBuf,
    #[arg(long)]
    pub clinical: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 20, value_parser = PossibleValuesParser::new(["20", "50"]).map(|s| s.parse::<usize>().unwrap()))]
    pub pathways: usize,
    #[arg(long, visible_alias = "outcome", value_enum)]
    pub outcome_type: SimOutcomeArg,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction CSV; the `prediction` column is scored.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub outcome: PathBuf,
    #[arg(long, value_enum)]
    pub outcome_type: OutcomeArg,
}
