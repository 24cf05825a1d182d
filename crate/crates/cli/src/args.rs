//! Flag definitions for every subcommand.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcqa_lens::data::SymbolSet;
use mcqa_lens::interp::{ProjectionMode, SiteFamily};
use mcqa_lens::train::SweepAnalysis;

#[derive(Debug, Parser)]
#[command(
    name = "mcqa-lens",
    version,
    about = "Experiments on formatted multiple-choice QA in small transformers",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the Copying-Colors dataset and its vocabulary.
    GenColors(GenColorsArgs),
    /// Train a model and record a checkpoint series with snapshots.
    Train(TrainArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Consistency evaluation: symbol sets x answer positions, min over sets.
    Eval(EvalArgs),
    /// Generative evaluation: first greedy token vs the gold answer word.
    EvalGenerative(EvalGenerativeArgs),
    /// Project layer outputs onto the vocabulary across all layers.
    Lens(LensArgs),
    /// Patch one site family across layers for a source -> target position pair.
    Patch(PatchArgs),
    /// Patch layer, attention, and MLP outputs across layers in one run.
    PatchSweep(PatchSweepArgs),
    /// Per-head answer-score heatmaps over correctly answered prompts.
    Heads(HeadsArgs),
    /// Re-run an analysis at every checkpoint of a training series.
    SweepCheckpoints(SweepCheckpointsArgs),
}

fn parse_symbols(s: &str) -> Result<SymbolSet, String> {
    SymbolSet::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<ProjectionMode, String> {
    ProjectionMode::parse(s).map_err(|e| e.to_string())
}

fn parse_site(s: &str) -> Result<SiteFamily, String> {
    SiteFamily::parse(s).map_err(|e| e.to_string())
}

fn parse_analysis(s: &str) -> Result<SweepAnalysis, String> {
    SweepAnalysis::parse(s).map_err(|e| e.to_string())
}

/// `all` or one answer position 0..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positions {
    All,
    One(usize),
}

impl Positions {
    pub fn list(&self) -> Vec<usize> {
        match self {
            Positions::All => vec![0, 1, 2, 3],
            Positions::One(p) => vec![*p],
        }
    }
}

fn parse_positions(s: &str) -> Result<Positions, String> {
    if s == "all" {
        return Ok(Positions::All);
    }
    match s.parse::<usize>() {
        Ok(p) if p < 4 => Ok(Positions::One(p)),
        _ => Err(format!("expected 'all' or a position 0..3, got {s:?}")),
    }
}

/// Half-open layer range `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

fn parse_layers(s: &str) -> Result<LayerRange, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a layer range like 0..4, got {s:?}"))?;
    let start = a.parse::<usize>().map_err(|_| format!("bad range start {a:?}"))?;
    let end = b.parse::<usize>().map_err(|_| format!("bad range end {b:?}"))?;
    if start >= end {
        return Err(format!("empty layer range {s:?}"));
    }
    Ok(LayerRange { start, end })
}

fn parse_shots(s: &str) -> Result<usize, String> {
    match s {
        "0" => Ok(0),
        "3" => Ok(3),
        other => Err(format!("shots must be 0 or 3, got {other:?}")),
    }
}

/// Flags shared by every experiment that scores prompts with a checkpoint.
#[derive(Debug, Args)]
pub struct ModelInputs {
    /// Model checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset JSONL (first 3 instances are the in-context examples).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vocabulary JSON.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output directory for the manifest, tables, and figures.
    #[arg(long)]
    pub out: PathBuf,
    /// In-context examples per prompt.
    #[arg(long, default_value = "3", value_parser = parse_shots)]
    pub shots: usize,
    /// Seed for the in-context example ordering.
    #[arg(long, default_value_t = 0)]
    pub icl_seed: u64,
    /// Evaluate only the first N test instances (0 = all).
    #[arg(long, default_value_t = 0)]
    pub cohort_size: usize,
}

#[derive(Debug, Args)]
pub struct GenColorsArgs {
    /// Seed for distractor sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (colors.jsonl + vocab.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSONL (first 3 instances are the in-context examples).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vocabulary JSON.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Run directory (checkpoints, train_log.csv, series.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Transformer blocks.
    #[arg(long, default_value_t = 4)]
    pub model_layers: usize,
    /// Attention heads per block.
    #[arg(long, default_value_t = 4)]
    pub model_heads: usize,
    /// Residual width.
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    /// Maximum sequence length.
    #[arg(long, default_value_t = 192)]
    pub max_seq: usize,
    /// Optimizer steps.
    #[arg(long, default_value_t = 1500)]
    pub steps: usize,
    /// Sequences per step.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Peak learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Linear warmup steps.
    #[arg(long, default_value_t = 100)]
    pub warmup_steps: usize,
    /// Decoupled weight decay (layer norms exempt).
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Fraction of generative (vs formatted) training sequences.
    #[arg(long, default_value_t = 0.5)]
    pub generative_fraction: f64,
    /// In-context examples per training sequence.
    #[arg(long, default_value = "3", value_parser = parse_shots)]
    pub shots: usize,
    /// Seed for init, sampling, and snapshot evals.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint/snapshot cadence; must divide --steps.
    #[arg(long, default_value_t = 150)]
    pub checkpoint_every: usize,
    /// Instances per snapshot evaluation.
    #[arg(long, default_value_t = 32)]
    pub eval_cohort: usize,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Seed for weights, sequences, and coordinate sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional output directory for the per-coordinate table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Also evaluate the OEBP symbol set (analysis only; the headline
    /// minimum stays over the three standard sets).
    #[arg(long)]
    pub include_oebp: bool,
}

#[derive(Debug, Args)]
pub struct EvalGenerativeArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
}

#[derive(Debug, Args)]
pub struct LensArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Symbol set: ABCD, QZRX, OEBP, 1234, or custom:WXYZ.
    #[arg(long, default_value = "ABCD", value_parser = parse_symbols)]
    pub symbols: SymbolSet,
    /// Gold answer positions to render: all, or one of 0..3.
    #[arg(long, default_value = "all", value_parser = parse_positions)]
    pub positions: Positions,
    /// Projection mode: ln (final layer norm) or raw (exact additivity).
    #[arg(long, default_value = "ln", value_parser = parse_mode)]
    pub mode: ProjectionMode,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Site family: layer_out, mhsa_out, mlp_out, or head_out.
    #[arg(long, default_value = "layer_out", value_parser = parse_site)]
    pub site: SiteFamily,
    /// Layer range a..b (default: every layer).
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<LayerRange>,
    /// Gold position of the source prompt.
    #[arg(long, default_value_t = 3)]
    pub source_position: usize,
    /// Gold position of the target prompt.
    #[arg(long, default_value_t = 0)]
    pub target_position: usize,
    /// Symbol set of the target prompt.
    #[arg(long, default_value = "ABCD", value_parser = parse_symbols)]
    pub symbols: SymbolSet,
    /// Symbol set of the source prompt (defaults to --symbols).
    #[arg(long, value_parser = parse_symbols)]
    pub source_symbols: Option<SymbolSet>,
}

#[derive(Debug, Args)]
pub struct PatchSweepArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Layer range a..b (default: every layer).
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<LayerRange>,
    /// Gold position of the source prompt.
    #[arg(long, default_value_t = 3)]
    pub source_position: usize,
    /// Gold position of the target prompt.
    #[arg(long, default_value_t = 0)]
    pub target_position: usize,
    /// Symbol set for both prompts.
    #[arg(long, default_value = "ABCD", value_parser = parse_symbols)]
    pub symbols: SymbolSet,
}

#[derive(Debug, Args)]
pub struct HeadsArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Symbol set the cohort shares.
    #[arg(long, default_value = "ABCD", value_parser = parse_symbols)]
    pub symbols: SymbolSet,
    /// Gold answer positions to render: all, or one of 0..3.
    #[arg(long, default_value = "all", value_parser = parse_positions)]
    pub positions: Positions,
    /// Layer range a..b (default: every layer).
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<LayerRange>,
}

#[derive(Debug, Args)]
pub struct SweepCheckpointsArgs {
    /// series.json from a training run; checkpoints resolve next to it.
    #[arg(long)]
    pub series: PathBuf,
    /// Dataset JSONL (first 3 instances are the in-context examples).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vocabulary JSON.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// consistency, logit_difference_curve, or lens.
    #[arg(long, value_parser = parse_analysis)]
    pub analysis: SweepAnalysis,
    /// Instances per checkpoint evaluation (0 = the series' own cohort).
    #[arg(long, default_value_t = 0)]
    pub cohort_size: usize,
    /// In-context examples per prompt (default: the series' own setting).
    #[arg(long, value_parser = parse_shots)]
    pub shots: Option<usize>,
    /// Seed for in-context ordering (default: the series' own seed).
    #[arg(long)]
    pub icl_seed: Option<u64>,
}
