//! Scratch harness for sizing the reference training run. Ignored by
//! default; run with
//! `cargo test -p mcqa-lens --test calibrate -- --ignored --nocapture`.

use std::time::Instant;

use mcqa_lens::data::colors::vocab_corpus;
use mcqa_lens::data::{gen_colors, Vocab};
use mcqa_lens::model::ModelConfig;
use mcqa_lens::train::{train, TrainConfig};

#[test]
#[ignore]
fn probe_sequence_lengths_and_step_time() {
    let dataset = gen_colors(0);
    let corpus = vocab_corpus(&dataset, &[]).unwrap();
    let vocab = Vocab::build(&corpus);
    println!("vocab size: {}", vocab.len());

    // longest 3-shot formatted sequence across sets and positions
    use mcqa_lens::data::{render_generative_shots, render_prompt, PromptSpec, SymbolSet};
    let mut max_formatted = 0;
    for inst in dataset.test.iter() {
        for &symbols in &SymbolSet::evaluated() {
            let spec = PromptSpec { symbols, correct_position: 3, shots: 3, icl_seed: 1 };
            let p = render_prompt(inst, &dataset.icl, &spec).unwrap();
            let n = vocab.encode_strict(&p.text).unwrap().len() + 2; // BOS + answer
            max_formatted = max_formatted.max(n);
        }
    }
    let mut max_generative = 0;
    for inst in dataset.test.iter() {
        let g = render_generative_shots(inst, &dataset.icl, 3).unwrap();
        let n = vocab
            .encode_strict(&format!("{} {}.", g.text, g.target))
            .unwrap()
            .len()
            + 1;
        max_generative = max_generative.max(n);
    }
    println!("max formatted seq: {max_formatted}, max generative seq: {max_generative}");

    // step timing at reference scale
    let model = ModelConfig::new(4, 4, 128, vocab.len(), 192);
    let mut config = TrainConfig::new(model, 5, 5);
    config.lr = 1e-3;
    config.seed = 0;
    config.eval_cohort = 4;
    let dir = tempfile::TempDir::new().unwrap();
    let t0 = Instant::now();
    train(&config, &dataset, &vocab, dir.path()).unwrap();
    println!("5 steps + 2 snapshots took {:.1?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_forward_backward_split() {
    use mcqa_lens::model::init_weights;
    use mcqa_lens::train::{seq_loss, seq_loss_and_grad};
    use mcqa_lens::model::Weights;

    let dataset = gen_colors(0);
    let corpus = vocab_corpus(&dataset, &[]).unwrap();
    let vocab = Vocab::build(&corpus);
    let config = ModelConfig::new(4, 4, 128, vocab.len(), 192);
    let weights = init_weights::<f32>(&config, 0).unwrap();
    let ids: Vec<u32> = (0..170).map(|i| (i % 250) as u32).collect();

    let t0 = Instant::now();
    for _ in 0..20 {
        seq_loss(&weights, &ids).unwrap();
    }
    let fwd = t0.elapsed() / 20;

    let mut grads = Weights::<f32>::zeros(&config).unwrap();
    let t0 = Instant::now();
    for _ in 0..20 {
        seq_loss_and_grad(&weights, &ids, &mut grads).unwrap();
    }
    let both = t0.elapsed() / 20;

    let t0 = Instant::now();
    for _ in 0..20 {
        mcqa_lens::model::forward(&weights, &ids, &[], &[]).unwrap();
    }
    let eval_fwd = t0.elapsed() / 20;

    println!("train forward {fwd:.1?}, fwd+bwd {both:.1?}, eval forward {eval_fwd:.1?}");
}

fn env_or<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Can a small model overfit the formatted task on a handful of instances?
/// Separates "binding is learnable here" from "the recipe is wrong".
#[test]
#[ignore]
fn probe_formatted_overfit() {
    let mut dataset = gen_colors(0);
    dataset.test.truncate(env_or("CAL_INSTANCES", 4));
    let corpus = vocab_corpus(&gen_colors(0), &[]).unwrap();
    let vocab = Vocab::build(&corpus);
    let shots = env_or("CAL_SHOTS", 0);
    let max_seq = if shots == 0 { 64 } else { 192 };
    let model = ModelConfig::new(
        env_or("CAL_L", 2),
        env_or("CAL_H", 2),
        env_or("CAL_D", 64),
        vocab.len(),
        max_seq,
    );
    let steps = env_or("CAL_STEPS", 1500);
    let mut config = TrainConfig::new(model, steps, env_or("CAL_EVERY", steps / 6));
    config.lr = env_or("CAL_LR", 1e-3);
    config.warmup_steps = 50;
    config.generative_fraction = 0.0;
    config.shots = shots;
    config.eval_cohort = dataset.test.len();
    config.seed = env_or("CAL_SEED", 0);
    let dir = tempfile::TempDir::new().unwrap();
    let t0 = Instant::now();
    let series = train(&config, &dataset, &vocab, dir.path()).unwrap();
    println!(
        "L{} H{} d{} shots {} instances {}: total {:.1?}, final loss {}",
        config.model.layers,
        config.model.heads,
        config.model.d_model,
        shots,
        dataset.test.len(),
        t0.elapsed(),
        series.final_loss
    );
    for s in &series.snapshots {
        println!(
            "{:>5}  min {:.4}  logit_diff {:?}  n_correct {}",
            s.step, s.eval.min_over_sets, s.eval.mean_logit_difference, s.eval.n_correct
        );
    }
}

#[test]
#[ignore]
fn reference_candidate_run() {
    let dataset = gen_colors(0);
    let corpus = vocab_corpus(&dataset, &[]).unwrap();
    let vocab = Vocab::build(&corpus);
    let model = ModelConfig::new(4, 4, 128, vocab.len(), 192);
    let steps = env_or("CAL_STEPS", 1500);
    let every = env_or("CAL_EVERY", steps / 10);
    let mut config = TrainConfig::new(model, steps, every);
    config.lr = env_or("CAL_LR", 1e-3);
    config.warmup_steps = env_or("CAL_WARMUP", 100);
    config.batch_size = env_or("CAL_BATCH", 8);
    config.generative_fraction = env_or("CAL_GENFRAC", 0.5);
    config.seed = env_or("CAL_SEED", 0);
    println!(
        "steps {} every {} lr {} warmup {} batch {} genfrac {} seed {}",
        steps, every, config.lr, config.warmup_steps, config.batch_size,
        config.generative_fraction, config.seed
    );
    let dir = tempfile::TempDir::new().unwrap();
    let t0 = Instant::now();
    let series = train(&config, &dataset, &vocab, dir.path()).unwrap();
    println!("total {:.1?}, final loss {}", t0.elapsed(), series.final_loss);
    println!("step  min_over_sets  generative  mean_logit_diff  n_correct");
    for s in &series.snapshots {
        println!(
            "{:>5}  {:>13.4}  {:>10.4}  {:>15.4}  {:>9}",
            s.step,
            s.eval.min_over_sets,
            s.eval.generative_accuracy,
            s.eval.mean_logit_difference.unwrap_or(f64::NAN),
            s.eval.n_correct
        );
    }
}
