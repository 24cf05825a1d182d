//! Deterministic trainer for the Copying-Colors task.
//!
//! Training sequences are a seeded 50/50 (configurable) mixture of
//! generative completions and formatted multiple-choice prompts, each
//! rendered with its gold answer appended so the model learns to emit it.
//! The loss is next-token cross-entropy over every position. The loop
//! checkpoints on a fixed cadence and records an evaluation snapshot at
//! each checkpoint; snapshots depend only on the saved weights and the
//! recorded evaluation parameters, so they can be reproduced later from
//! the checkpoint files alone.

mod backward;
pub mod gradcheck;

pub use backward::{seq_loss, seq_loss_and_grad};
pub use gradcheck::{grad_check, grad_check_tiny, CoordCheck, GradCheckReport};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    render_generative_shots, render_prompt, ColorsDataset, PromptSpec, SymbolSet, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{consistency_with_outcomes, eval_generative, TransformerScorer};
use crate::interp::{vocab_project, ProjectionMode};
use crate::model::{
    forward, init_weights, load_checkpoint, save_checkpoint, HookSite, ModelConfig, Site, Weights,
};
use crate::TokenId;

/// Hyperparameters and bookkeeping cadence for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Optimizer steps to run.
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    /// Peak learning rate (reached after warmup).
    pub lr: f64,
    /// Steps of linear warmup from 0 to `lr`; 0 disables warmup.
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay; layer-norm gains and biases are exempt.
    pub weight_decay: f64,
    /// Fraction of training sequences rendered generative rather than
    /// formatted multiple-choice.
    pub generative_fraction: f64,
    /// In-context examples per training sequence (0 or 3).
    pub shots: usize,
    /// Seeds weight init, batch sampling, and the snapshot evaluations.
    pub seed: u64,
    /// Checkpoint + snapshot cadence; must divide `steps`.
    pub checkpoint_every: usize,
    /// Instances per snapshot evaluation.
    pub eval_cohort: usize,
}

impl TrainConfig {
    /// Conventional defaults around a given model; callers set `steps`
    /// and `checkpoint_every`.
    pub fn new(model: ModelConfig, steps: usize, checkpoint_every: usize) -> TrainConfig {
        TrainConfig {
            model,
            steps,
            batch_size: 8,
            lr: 3e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            generative_fraction: 0.5,
            shots: 3,
            seed: 0,
            checkpoint_every,
            eval_cohort: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight_decay {} is invalid", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.generative_fraction) {
            return Err(Error::Config(format!(
                "generative_fraction must be in [0, 1], got {}",
                self.generative_fraction
            )));
        }
        if self.shots != 0 && self.shots != 3 {
            return Err(Error::Config(format!("shots must be 0 or 3, got {}", self.shots)));
        }
        if self.checkpoint_every == 0 || self.steps % self.checkpoint_every != 0 {
            return Err(Error::Config(format!(
                "checkpoint_every ({}) must be positive and divide steps ({})",
                self.checkpoint_every, self.steps
            )));
        }
        if self.eval_cohort == 0 {
            return Err(Error::Config("eval_cohort must be positive".into()));
        }
        Ok(())
    }
}

/// Accuracy of one symbol set, averaged over the four answer positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAccuracy {
    pub set: String,
    pub mean: f64,
}

/// Everything a snapshot evaluation measures. Depends only on the weights
/// and the recorded evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_set: Vec<SetAccuracy>,
    /// Headline number: the worst per-set mean.
    pub min_over_sets: f64,
    pub generative_accuracy: f64,
    /// Mean answer-logit margin over correctly answered prompts; absent
    /// when nothing was answered correctly.
    pub mean_logit_difference: Option<f64>,
    pub n_correct: usize,
    pub n_prompts: usize,
}

/// One checkpoint of a training run with its evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEval {
    pub step: usize,
    /// Checkpoint file name, relative to the run directory.
    pub checkpoint: String,
    pub eval: EvalSummary,
}

/// Ordered record of a training run: config, snapshot per checkpoint, and
/// the evaluation parameters needed to reproduce every snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub config: TrainConfig,
    /// Seed for the in-context orderings used by every snapshot eval.
    pub eval_icl_seed: u64,
    pub snapshots: Vec<SnapshotEval>,
    /// Mean training loss of the last step.
    pub final_loss: f64,
}

impl CheckpointSeries {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.snapshots.is_empty() {
            return Err(Error::Config("a checkpoint series cannot be empty".into()));
        }
        for pair in self.snapshots.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::Config(format!(
                    "checkpoint steps must increase strictly: {} then {}",
                    pair[0].step, pair[1].step
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CheckpointSeries> {
        let text = fs::read_to_string(path)?;
        let series: CheckpointSeries = serde_json::from_str(&text)?;
        series.validate()?;
        Ok(series)
    }
}

/// Renders one formatted training sequence: prompt text plus the gold
/// answer token, BOS-prefixed.
fn formatted_sequence(
    vocab: &Vocab,
    dataset: &ColorsDataset,
    instance: usize,
    symbols: SymbolSet,
    position: usize,
    shots: usize,
    icl_seed: u64,
) -> Result<Vec<TokenId>> {
    let spec = PromptSpec { symbols, correct_position: position, shots, icl_seed };
    let prompt = render_prompt(&dataset.test[instance], &dataset.icl, &spec)?;
    let mut text = prompt.text;
    text.push_str(&symbols.answer_token(position));
    let mut ids = vec![crate::data::vocab::BOS];
    ids.extend(vocab.encode_strict(&text)?);
    Ok(ids)
}

/// Renders one generative training sequence: few-shot completions with the
/// query answered, BOS-prefixed.
fn generative_sequence(
    vocab: &Vocab,
    dataset: &ColorsDataset,
    instance: usize,
    shots: usize,
) -> Result<Vec<TokenId>> {
    let g = render_generative_shots(&dataset.test[instance], &dataset.icl, shots)?;
    let mut text = g.text;
    text.push_str(&format!(" {}.", g.target));
    let mut ids = vec![crate::data::vocab::BOS];
    ids.extend(vocab.encode_strict(&text)?);
    Ok(ids)
}

/// Draws the next training sequence. The draw order (kind, instance, then
/// any formatting choices) is part of the determinism contract.
fn sample_sequence(
    rng: &mut ChaCha8Rng,
    config: &TrainConfig,
    dataset: &ColorsDataset,
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    let generative = rng.random_bool(config.generative_fraction);
    let instance = rng.random_range(0..dataset.test.len());
    if generative {
        generative_sequence(vocab, dataset, instance, config.shots)
    } else {
        let sets = SymbolSet::evaluated();
        let symbols = sets[rng.random_range(0..sets.len())];
        let position = rng.random_range(0..4);
        let icl_seed: u64 = rng.random();
        formatted_sequence(vocab, dataset, instance, symbols, position, config.shots, icl_seed)
    }
}

/// Adam with decoupled weight decay. Layer-norm parameters (every tensor
/// whose name contains "ln") are exempt from decay.
struct Adam {
    m: Weights<f32>,
    v: Weights<f32>,
    t: i32,
}

impl Adam {
    fn new(config: &ModelConfig) -> Result<Adam> {
        Ok(Adam { m: Weights::zeros(config)?, v: Weights::zeros(config)?, t: 0 })
    }

    fn step(&mut self, weights: &mut Weights<f32>, grads: &Weights<f32>, config: &TrainConfig, lr: f32) {
        self.t += 1;
        let b1 = config.beta1 as f32;
        let b2 = config.beta2 as f32;
        let eps = config.adam_eps as f32;
        let wd = config.weight_decay as f32;
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let ws = weights.named_mut();
        let gs = grads.named();
        let ms = self.m.named_mut();
        let vs = self.v.named_mut();
        for ((((name, w), (_, g)), (_, m)), (_, v)) in
            ws.into_iter().zip(gs).zip(ms).zip(vs)
        {
            let decay = if name.contains("ln") { 0.0 } else { wd };
            let w = w.data_mut();
            let g = g.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let update = lr * (mhat / (vhat.sqrt() + eps) + decay * w[i]);
                // skipping an exactly-zero update keeps lr = 0 bitwise
                if update != 0.0 {
                    w[i] -= update;
                }
            }
        }
    }
}

/// Runs the consistency and generative evaluations that every checkpoint
/// snapshot records. Pure in the weights: reloading a checkpoint and
/// calling this again reproduces the stored summary exactly.
pub fn snapshot_eval(
    weights: &Weights<f32>,
    vocab: &Vocab,
    dataset: &ColorsDataset,
    cohort: usize,
    shots: usize,
    icl_seed: u64,
) -> Result<EvalSummary> {
    if dataset.test.is_empty() {
        return Err(Error::EmptyCohort("dataset has no test instances".into()));
    }
    let n = cohort.min(dataset.test.len());
    let instances = &dataset.test[..n];
    let mut scorer = TransformerScorer { weights, vocab };
    let (report, outcomes) =
        consistency_with_outcomes(&mut scorer, instances, &dataset.icl, shots, icl_seed, false)?;
    let generative_accuracy =
        eval_generative(&mut scorer, vocab, instances, &dataset.icl, shots)?;
    let margins: Vec<f64> =
        outcomes.iter().filter(|o| o.correct).map(|o| o.score_margin()).collect();
    let mean_logit_difference = if margins.is_empty() {
        None
    } else {
        Some(margins.iter().sum::<f64>() / margins.len() as f64)
    };
    Ok(EvalSummary {
        per_set: report
            .sets
            .iter()
            .map(|s| SetAccuracy { set: s.symbol_set.clone(), mean: s.mean })
            .collect(),
        min_over_sets: report.min_over_sets,
        generative_accuracy,
        mean_logit_difference,
        n_correct: margins.len(),
        n_prompts: outcomes.len(),
    })
}

fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.bin")
}

fn take_snapshot(
    step: usize,
    weights: &Weights<f32>,
    vocab: &Vocab,
    dataset: &ColorsDataset,
    config: &TrainConfig,
    eval_icl_seed: u64,
    out_dir: &Path,
) -> Result<SnapshotEval> {
    let name = checkpoint_name(step);
    save_checkpoint(weights, &out_dir.join(&name))?;
    let eval =
        snapshot_eval(weights, vocab, dataset, config.eval_cohort, config.shots, eval_icl_seed)?;
    Ok(SnapshotEval { step, checkpoint: name, eval })
}

/// Trains a model from scratch, writing `checkpoint_*.bin`, `train_log.csv`
/// (step, loss, lr), and `series.json` into `out_dir`. Identical config and
/// dataset yield bitwise-identical checkpoints.
pub fn train(
    config: &TrainConfig,
    dataset: &ColorsDataset,
    vocab: &Vocab,
    out_dir: &Path,
) -> Result<CheckpointSeries> {
    config.validate()?;
    if config.model.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match the vocabulary ({} tokens)",
            config.model.vocab_size,
            vocab.len()
        )));
    }
    if dataset.test.is_empty() {
        return Err(Error::Config("dataset has no test instances".into()));
    }
    if config.shots > dataset.icl.len() {
        return Err(Error::Config(format!(
            "{} shots requested but the dataset has {} in-context instances",
            config.shots,
            dataset.icl.len()
        )));
    }
    fs::create_dir_all(out_dir)?;

    let mut weights = init_weights::<f32>(&config.model, config.seed)?;
    let mut grads = Weights::<f32>::zeros(&config.model)?;
    let mut adam = Adam::new(&config.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eval_icl_seed = config.seed;

    let log_path = out_dir.join("train_log.csv");
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    writeln!(log, "step,loss,lr")?;

    let mut snapshots =
        vec![take_snapshot(0, &weights, vocab, dataset, config, eval_icl_seed, out_dir)?];
    let mut last_good = 0usize;
    let mut final_loss = f64::NAN;

    for step in 1..=config.steps {
        for (_, g) in grads.named_mut() {
            for v in g.data_mut() {
                *v = 0.0;
            }
        }
        let mut loss_sum = 0.0f64;
        let mut position_sum = 0usize;
        for _ in 0..config.batch_size {
            let ids = sample_sequence(&mut rng, config, dataset, vocab)?;
            let (loss, n) = seq_loss_and_grad(&weights, &ids, &mut grads).map_err(|e| {
                Error::Train(format!(
                    "step {step} failed (last good step {last_good}): {e}"
                ))
            })?;
            loss_sum += loss as f64;
            position_sum += n;
        }
        let mean_loss = loss_sum / position_sum as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Train(format!(
                "loss diverged at step {step} (last good step {last_good})"
            )));
        }
        let scale = (1.0 / position_sum as f64) as f32;
        for (_, g) in grads.named_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        let lr_t = if config.warmup_steps > 0 && step <= config.warmup_steps {
            config.lr * step as f64 / config.warmup_steps as f64
        } else {
            config.lr
        };
        adam.step(&mut weights, &grads, config, lr_t as f32);
        writeln!(log, "{step},{mean_loss},{lr_t}")?;
        last_good = step;
        final_loss = mean_loss;
        if step % config.checkpoint_every == 0 {
            snapshots.push(take_snapshot(
                step,
                &weights,
                vocab,
                dataset,
                config,
                eval_icl_seed,
                out_dir,
            )?);
        }
    }
    log.flush()?;

    let series =
        CheckpointSeries { config: config.clone(), eval_icl_seed, snapshots, final_loss };
    series.save(&out_dir.join("series.json"))?;
    Ok(series)
}

/// Which analysis a checkpoint sweep runs at every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAnalysis {
    /// Per-set and min-over-sets accuracy plus generative accuracy.
    Consistency,
    /// Mean answer-logit margin on correct predictions.
    LogitDifferenceCurve,
    /// Mean final-layer-normed logit difference per layer output.
    Lens,
}

impl SweepAnalysis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAnalysis::Consistency => "consistency",
            SweepAnalysis::LogitDifferenceCurve => "logit_difference_curve",
            SweepAnalysis::Lens => "lens",
        }
    }

    pub fn parse(s: &str) -> Result<SweepAnalysis> {
        match s {
            "consistency" => Ok(SweepAnalysis::Consistency),
            "logit_difference_curve" => Ok(SweepAnalysis::LogitDifferenceCurve),
            "lens" => Ok(SweepAnalysis::Lens),
            other => Err(Error::Config(format!(
                "unknown sweep analysis '{other}' (expected consistency, \
                 logit_difference_curve, or lens)"
            ))),
        }
    }
}

/// One cross-checkpoint table: a named column set and one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTable {
    pub analysis: String,
    pub columns: Vec<String>,
    pub rows: Vec<CheckpointRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub step: usize,
    pub values: Vec<f64>,
}

/// Mean answer-margin lens projection per layer over the correctly
/// answered prompts of the cohort; NaN columns when nothing is correct.
fn lens_row(
    weights: &Weights<f32>,
    vocab: &Vocab,
    dataset: &ColorsDataset,
    cohort: usize,
    shots: usize,
    icl_seed: u64,
) -> Result<Vec<f64>> {
    let layers = weights.config.layers;
    let n = cohort.min(dataset.test.len());
    let mut sums = vec![0.0f64; layers];
    let mut count = 0usize;
    for inst in &dataset.test[..n] {
        for position in 0..4 {
            let spec = PromptSpec {
                symbols: SymbolSet::Abcd,
                correct_position: position,
                shots,
                icl_seed,
            };
            let prompt = render_prompt(inst, &dataset.icl, &spec)?;
            let inputs = crate::eval::PromptInputs::from_rendered(vocab, &prompt)?;
            let sites: Vec<HookSite> =
                (0..layers).map(|l| HookSite::last(Site::LayerOut(l))).collect();
            let trace = forward(weights, &inputs.ids, &sites, &[])?;
            let mut scores = [0.0f64; 4];
            for (s, &id) in scores.iter_mut().zip(&inputs.answer_ids) {
                *s = trace.logits[id as usize] as f64;
            }
            let (predicted, _) = crate::eval::restricted_argmax(&scores);
            if predicted != position {
                continue;
            }
            count += 1;
            for (l, site) in sites.iter().enumerate() {
                let state = trace.get(site).expect("requested capture present");
                let (logits, _) = vocab_project(weights, state, ProjectionMode::WithFinalLn)?;
                let mut answer = [0.0f64; 4];
                for (a, &id) in answer.iter_mut().zip(&inputs.answer_ids) {
                    *a = logits[id as usize] as f64;
                }
                let best_other = answer
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != predicted)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                sums[l] += answer[predicted] - best_other;
            }
        }
    }
    if count == 0 {
        return Ok(vec![f64::NAN; layers]);
    }
    Ok(sums.iter().map(|s| s / count as f64).collect())
}

/// Runs `analysis` on every checkpoint of `series` (files resolved against
/// `series_dir`) and tabulates one row per checkpoint.
pub fn sweep_checkpoints(
    series: &CheckpointSeries,
    series_dir: &Path,
    dataset: &ColorsDataset,
    vocab: &Vocab,
    analysis: SweepAnalysis,
    cohort: usize,
    shots: usize,
    icl_seed: u64,
) -> Result<CheckpointTable> {
    series.validate()?;
    if series.snapshots.len() < 2 {
        return Err(Error::Config(format!(
            "a checkpoint sweep needs at least 2 checkpoints, got {}",
            series.snapshots.len()
        )));
    }
    let columns: Vec<String> = match analysis {
        SweepAnalysis::Consistency => {
            let mut cols: Vec<String> =
                SymbolSet::evaluated().iter().map(|s| s.name()).collect();
            cols.push("min_over_sets".into());
            cols.push("generative_accuracy".into());
            cols
        }
        SweepAnalysis::LogitDifferenceCurve => {
            vec!["mean_logit_difference".into(), "n_correct".into()]
        }
        SweepAnalysis::Lens => {
            (0..series.config.model.layers).map(|l| format!("layer_{l}")).collect()
        }
    };
    let mut rows = Vec::with_capacity(series.snapshots.len());
    for snap in &series.snapshots {
        let path = series_dir.join(&snap.checkpoint);
        let weights = load_checkpoint(&path).map_err(|e| {
            Error::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let values = match analysis {
            SweepAnalysis::Consistency => {
                let eval = snapshot_eval(&weights, vocab, dataset, cohort, shots, icl_seed)?;
                let mut v: Vec<f64> = eval.per_set.iter().map(|s| s.mean).collect();
                v.push(eval.min_over_sets);
                v.push(eval.generative_accuracy);
                v
            }
            SweepAnalysis::LogitDifferenceCurve => {
                let eval = snapshot_eval(&weights, vocab, dataset, cohort, shots, icl_seed)?;
                vec![
                    eval.mean_logit_difference.unwrap_or(f64::NAN),
                    eval.n_correct as f64,
                ]
            }
            SweepAnalysis::Lens => {
                lens_row(&weights, vocab, dataset, cohort, shots, icl_seed)?
            }
        };
        rows.push(CheckpointRow { step: snap.step, values });
    }
    Ok(CheckpointTable { analysis: analysis.name().to_string(), columns, rows })
}
