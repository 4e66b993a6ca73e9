mod commands;
mod config;
mod exit;
mod output;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use neft_core::models::Variant;
use neft_core::trainer::MetricDomain;
use neft_tensor::DType;

#[derive(Parser, Debug)]
#[command(name = "neft", version, about = "Near-field CSI feedback transformers: data, training, distillation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a near-field channel dataset.
    GenData(GenDataArgs),
    /// Train a model with the reconstruction loss.
    Train(TrainArgs),
    /// Train a student against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Measure NMSE and rho of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Per-layer FLOPs and parameter counts.
    Flops(FlopsArgs),
    /// Dump attention maps of one sample as CSV matrices.
    ExportAttn(ExportAttnArgs),
    /// Merge experiment reports into one table.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON run config, or any artifact with an embedded `run_config`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output location (defaults to $NEFT_OUT_DIR/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Base-station antennas.
    #[arg(long)]
    pub n1: Option<usize>,
    /// UE antennas.
    #[arg(long)]
    pub n2: Option<usize>,
    /// Carrier frequency in Hz.
    #[arg(long)]
    pub freq: Option<f64>,
    /// Element spacing in meters (default: half wavelength).
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Lower distance bound as a fraction of the Rayleigh distance.
    #[arg(long, allow_negative_numbers = true)]
    pub r_lo: Option<f64>,
    /// Upper distance bound as a fraction of the Rayleigh distance.
    #[arg(long, allow_negative_numbers = true)]
    pub r_hi: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Storage precision: f32 or f64.
    #[arg(long, value_parser = parse_dtype)]
    pub dtype: Option<DType>,
}

/// Optimization and architecture overrides shared by `train` and `distill`.
#[derive(Args, Debug)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate of the cosine schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds both parameter initialization and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Training precision: f32 or f64.
    #[arg(long, value_parser = parse_dtype)]
    pub precision: Option<DType>,
    /// Disable early stopping.
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long)]
    pub c1: Option<usize>,
    #[arg(long)]
    pub c0: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<f64>,
    /// Optional test set; its metrics become the report's final metrics.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// NEFT, Compact, Hybrid or Edge.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: Common,
    /// Teacher checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Defaults to the teacher's student variant (NEFT -> Compact, Hybrid -> Edge).
    #[arg(long)]
    pub student_variant: Option<Variant>,
    /// Preset (full, only_recon, without_kd) or `l1,l2,l3`.
    #[arg(long)]
    pub lambdas: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// normalized or denormalized.
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<MetricDomain>,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, conflicts_with = "checkpoint")]
    pub variant: Option<Variant>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub c1: Option<usize>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub c0: Option<usize>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub mlp_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExportAttnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub sample_index: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// `report.json` files from train or distill runs.
    #[arg(long, num_args = 1..)]
    pub reports: Vec<PathBuf>,
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    match s.to_ascii_lowercase().as_str() {
        "f32" | "float32" => Ok(DType::F32),
        "f64" | "float64" => Ok(DType::F64),
        _ => Err(format!("unknown precision `{s}` (f32 or f64)")),
    }
}

fn parse_domain(s: &str) -> Result<MetricDomain, String> {
    match s.to_ascii_lowercase().as_str() {
        "normalized" => Ok(MetricDomain::Normalized),
        "denormalized" => Ok(MetricDomain::Denormalized),
        _ => Err(format!("unknown metric domain `{s}` (normalized or denormalized)")),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Distill(a) => commands::distill(a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(a),
        Command::ExportAttn(a) => commands::export_attn(a),
        Command::Compare(a) => commands::compare(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(exit::code_for(&e));
    }
}
