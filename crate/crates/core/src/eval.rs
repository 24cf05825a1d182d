//! Scoring and evaluation protocols for formatted multiple-choice prompts.
//!
//! The scoring rule is a restricted argmax: the model's prediction is the
//! displayed position whose answer-symbol token has the highest final-position
//! logit, ignoring the rest of the vocabulary. The consistency protocol
//! renders each instance under several symbol sets and all four gold
//! positions, averages accuracy per set over positions, and reports the
//! minimum across sets, which punishes symbol and position bias.

use serde::{Deserialize, Serialize};

use crate::data::{
    render_generative, render_generative_shots, render_prompt, McqaInstance, PromptSpec,
    RenderedPrompt, SymbolSet, Vocab,
};
use crate::error::{Error, Result};
use crate::model::{forward, Weights};
use crate::scalar::Scalar;
use crate::TokenId;

/// Token-level view of a rendered prompt: everything a model run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInputs {
    /// BOS followed by the encoded prompt text.
    pub ids: Vec<TokenId>,
    /// Answer-symbol token ids in displayed order.
    pub answer_ids: [TokenId; 4],
    pub symbols: [char; 4],
    pub gold_position: usize,
}

impl PromptInputs {
    pub fn from_rendered(vocab: &Vocab, prompt: &RenderedPrompt) -> Result<PromptInputs> {
        let mut ids = vec![crate::data::vocab::BOS];
        ids.extend(vocab.encode_strict(&prompt.text)?);
        Ok(PromptInputs {
            ids,
            answer_ids: prompt.answer_token_ids(vocab)?,
            symbols: prompt.symbols.chars(),
            gold_position: prompt.gold_position,
        })
    }

    pub fn gold_symbol(&self) -> char {
        self.symbols[self.gold_position]
    }

    pub fn gold_token_id(&self) -> TokenId {
        self.answer_ids[self.gold_position]
    }
}

/// Argmax over the four displayed positions; exact ties go to the lowest
/// position and are flagged.
pub fn restricted_argmax(scores: &[f64; 4]) -> (usize, bool) {
    let mut best = 0;
    for i in 1..4 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    let tie = (0..4).any(|i| i != best && scores[i] == scores[best]);
    (best, tie)
}

/// Outcome of scoring one prompt against full final-position logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub predicted_position: usize,
    pub correct: bool,
    pub tie: bool,
    /// Unrestricted greedy token, which may not be an answer symbol at all.
    pub full_vocab_argmax: TokenId,
}

pub fn score_instance<F: Scalar>(
    final_logits: &[F],
    answer_ids: [TokenId; 4],
    gold_position: usize,
) -> Result<Scored> {
    if gold_position >= 4 {
        return Err(Error::Config(format!("gold position {gold_position} out of range")));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if answer_ids[i] == answer_ids[j] {
                return Err(Error::Config(format!(
                    "answer token ids must be distinct, got {answer_ids:?}"
                )));
            }
        }
    }
    let mut scores = [0.0f64; 4];
    for (s, &id) in scores.iter_mut().zip(&answer_ids) {
        let id = id as usize;
        if id >= final_logits.len() {
            return Err(Error::Config(format!(
                "answer token id {id} out of range for {} logits",
                final_logits.len()
            )));
        }
        *s = final_logits[id].to_f64_();
    }
    let (predicted_position, tie) = restricted_argmax(&scores);
    let mut full = 0usize;
    for (i, &v) in final_logits.iter().enumerate() {
        if v > final_logits[full] {
            full = i;
        }
    }
    Ok(Scored {
        predicted_position,
        correct: predicted_position == gold_position,
        tie,
        full_vocab_argmax: full as TokenId,
    })
}

/// Anything that can score the four displayed choices of a formatted prompt.
/// Scores are compared by [`restricted_argmax`]; only their order matters.
pub trait ChoiceModel {
    fn answer_scores(&mut self, prompt: &RenderedPrompt) -> Result<[f64; 4]>;
}

/// Anything that can greedily produce the next token after a text prompt.
pub trait GenerativeModel {
    fn first_token(&mut self, text: &str) -> Result<TokenId>;
}

/// The real model behind both evaluation interfaces.
pub struct TransformerScorer<'a> {
    pub weights: &'a Weights<f32>,
    pub vocab: &'a Vocab,
}

impl ChoiceModel for TransformerScorer<'_> {
    fn answer_scores(&mut self, prompt: &RenderedPrompt) -> Result<[f64; 4]> {
        let inputs = PromptInputs::from_rendered(self.vocab, prompt)?;
        let trace = forward(self.weights, &inputs.ids, &[], &[])?;
        let mut scores = [0.0f64; 4];
        for (s, &id) in scores.iter_mut().zip(&inputs.answer_ids) {
            *s = trace.logits[id as usize] as f64;
        }
        Ok(scores)
    }
}

impl GenerativeModel for TransformerScorer<'_> {
    fn first_token(&mut self, text: &str) -> Result<TokenId> {
        let mut ids = vec![crate::data::vocab::BOS];
        ids.extend(self.vocab.encode_strict(text)?);
        let trace = forward(self.weights, &ids, &[], &[])?;
        let mut best = 0usize;
        for (i, &v) in trace.logits.iter().enumerate() {
            if v > trace.logits[best] {
                best = i;
            }
        }
        Ok(best as TokenId)
    }
}

/// Baseline that always bets on the first displayed choice. Under the
/// position-balanced protocol it scores exactly 25% per symbol set.
pub struct FirstPositionBaseline;

impl ChoiceModel for FirstPositionBaseline {
    fn answer_scores(&mut self, _prompt: &RenderedPrompt) -> Result<[f64; 4]> {
        Ok([1.0, 0.0, 0.0, 0.0])
    }
}

/// Baseline that peeks at the gold position: the 100% upper bound.
pub struct GoldOracle;

impl ChoiceModel for GoldOracle {
    fn answer_scores(&mut self, prompt: &RenderedPrompt) -> Result<[f64; 4]> {
        let mut scores = [0.0f64; 4];
        scores[prompt.gold_position] = 1.0;
        Ok(scores)
    }
}

/// Generative baseline that emits one fixed token regardless of the prompt.
pub struct ConstantToken(pub TokenId);

impl GenerativeModel for ConstantToken {
    fn first_token(&mut self, _text: &str) -> Result<TokenId> {
        Ok(self.0)
    }
}

/// Per-prompt detail kept alongside the aggregate report.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptOutcome {
    pub instance: usize,
    pub symbols: SymbolSet,
    pub position: usize,
    pub scores: [f64; 4],
    pub predicted: usize,
    pub correct: bool,
    pub tie: bool,
}

impl PromptOutcome {
    /// Score of the predicted position minus the best other answer score.
    /// At the final layer these scores are logits, making this the
    /// logit-difference summary.
    pub fn score_margin(&self) -> f64 {
        let mut other = f64::NEG_INFINITY;
        for (i, &s) in self.scores.iter().enumerate() {
            if i != self.predicted && s > other {
                other = s;
            }
        }
        self.scores[self.predicted] - other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub symbol_set: String,
    /// Accuracy at each gold position.
    pub per_position: [f64; 4],
    /// Mean of the four per-position accuracies.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub sets: Vec<SetReport>,
    /// The headline number: minimum over symbol sets of the per-set means.
    pub min_over_sets: f64,
    pub n_instances: usize,
    pub prompts_per_instance: usize,
    pub ties: usize,
}

impl ConsistencyReport {
    pub fn mean_over_sets(&self) -> f64 {
        self.sets.iter().map(|s| s.mean).sum::<f64>() / self.sets.len() as f64
    }
}

/// Which symbol sets a consistency evaluation covers. The headline protocol
/// uses three; the fourth is available for analyses that want it.
pub fn consistency_sets(include_oebp: bool) -> Vec<SymbolSet> {
    let mut sets = SymbolSet::evaluated().to_vec();
    if include_oebp {
        sets.push(SymbolSet::Oebp);
    }
    sets
}

/// Runs the full consistency protocol and keeps every per-prompt outcome.
pub fn consistency_with_outcomes<M: ChoiceModel>(
    model: &mut M,
    instances: &[McqaInstance],
    icl: &[McqaInstance],
    shots: usize,
    icl_seed: u64,
    include_oebp: bool,
) -> Result<(ConsistencyReport, Vec<PromptOutcome>)> {
    if instances.is_empty() {
        return Err(Error::EmptyCohort("consistency evaluation needs at least one instance".into()));
    }
    let sets = consistency_sets(include_oebp);
    let mut outcomes = Vec::with_capacity(instances.len() * sets.len() * 4);
    let mut reports = Vec::with_capacity(sets.len());
    let mut ties = 0usize;
    for &symbols in &sets {
        let mut per_position = [0.0f64; 4];
        for position in 0..4 {
            let mut correct = 0usize;
            for (i, inst) in instances.iter().enumerate() {
                let spec =
                    PromptSpec { symbols, correct_position: position, shots, icl_seed };
                let prompt = render_prompt(inst, icl, &spec)?;
                let scores = model.answer_scores(&prompt)?;
                let (predicted, tie) = restricted_argmax(&scores);
                let is_correct = predicted == position;
                correct += is_correct as usize;
                ties += tie as usize;
                outcomes.push(PromptOutcome {
                    instance: i,
                    symbols,
                    position,
                    scores,
                    predicted,
                    correct: is_correct,
                    tie,
                });
            }
            per_position[position] = correct as f64 / instances.len() as f64;
        }
        let mean = per_position.iter().sum::<f64>() / 4.0;
        reports.push(SetReport { symbol_set: symbols.name(), per_position, mean });
    }
    let min_over_sets = reports.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
    let report = ConsistencyReport {
        min_over_sets,
        prompts_per_instance: sets.len() * 4,
        sets: reports,
        n_instances: instances.len(),
        ties,
    };
    Ok((report, outcomes))
}

pub fn eval_consistency<M: ChoiceModel>(
    model: &mut M,
    instances: &[McqaInstance],
    icl: &[McqaInstance],
    shots: usize,
    icl_seed: u64,
    include_oebp: bool,
) -> Result<ConsistencyReport> {
    consistency_with_outcomes(model, instances, icl, shots, icl_seed, include_oebp)
        .map(|(report, _)| report)
}

/// Fraction of instances whose first greedy token is the gold answer word.
pub fn eval_generative<M: GenerativeModel>(
    model: &mut M,
    vocab: &Vocab,
    instances: &[McqaInstance],
    icl: &[McqaInstance],
    shots: usize,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyCohort("generative evaluation needs at least one instance".into()));
    }
    let mut correct = 0usize;
    for inst in instances {
        let prompt = if shots == 0 {
            render_generative(inst)?
        } else {
            render_generative_shots(inst, icl, shots)?
        };
        let first = crate::data::vocab::tokenize(&format!(" {}", prompt.target))
            .into_iter()
            .next()
            .ok_or_else(|| Error::Protocol(format!("empty answer word in '{}'", prompt.target)))?;
        let want = vocab
            .id(&first)
            .ok_or_else(|| Error::Vocab(format!("answer word '{first}' not in vocabulary")))?;
        let got = model.first_token(&prompt.text)?;
        correct += (got == want) as usize;
    }
    Ok(correct as f64 / instances.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_colors;

    struct CountingModel {
        calls: usize,
    }

    impl ChoiceModel for CountingModel {
        fn answer_scores(&mut self, _prompt: &RenderedPrompt) -> Result<[f64; 4]> {
            self.calls += 1;
            Ok([1.0, 0.0, 0.0, 0.0])
        }
    }

    #[test]
    fn restricted_argmax_ties_go_to_the_lowest_position() {
        assert_eq!(restricted_argmax(&[2.0, 0.1, -1.0, 0.0]), (0, false));
        assert_eq!(restricted_argmax(&[0.5, 0.5, 0.5, 0.5]), (0, true));
        assert_eq!(restricted_argmax(&[0.0, 3.0, 3.0, 1.0]), (1, true));
        assert_eq!(restricted_argmax(&[0.0, 1.0, 2.0, 3.0]), (3, false));
    }

    #[test]
    fn score_instance_reads_answer_ids_out_of_full_logits() {
        let mut logits = vec![0.0f32; 10];
        logits[3] = 2.0;
        logits[5] = 0.1;
        logits[7] = -1.0;
        logits[9] = 0.0;
        let scored = score_instance(&logits, [3, 5, 7, 9], 0).unwrap();
        assert_eq!(scored.predicted_position, 0);
        assert!(scored.correct);
        assert!(!scored.tie);
        assert_eq!(scored.full_vocab_argmax, 3);
    }

    #[test]
    fn full_vocab_argmax_can_disagree_with_the_restricted_rule() {
        let mut logits = vec![0.0f32; 10];
        logits[1] = 9.0; // not an answer token
        logits[3] = 2.0;
        let scored = score_instance(&logits, [3, 5, 7, 9], 0).unwrap();
        assert_eq!(scored.predicted_position, 0);
        assert_eq!(scored.full_vocab_argmax, 1);
    }

    #[test]
    fn all_equal_answer_logits_predict_position_zero_with_a_tie() {
        let logits = vec![1.0f32; 8];
        let scored = score_instance(&logits, [0, 2, 4, 6], 2).unwrap();
        assert_eq!(scored.predicted_position, 0);
        assert!(scored.tie);
        assert!(!scored.correct);
    }

    #[test]
    fn duplicate_answer_ids_are_rejected() {
        let logits = vec![1.0f32; 8];
        assert!(score_instance(&logits, [0, 2, 2, 6], 0).is_err());
        assert!(score_instance(&logits, [0, 2, 4, 99], 0).is_err());
    }

    #[test]
    fn first_position_baseline_scores_exactly_a_quarter_per_set() {
        let data = gen_colors(3);
        let report = eval_consistency(
            &mut FirstPositionBaseline,
            &data.test,
            &data.icl,
            3,
            0,
            false,
        )
        .unwrap();
        assert_eq!(report.sets.len(), 3);
        for set in &report.sets {
            assert_eq!(set.per_position, [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(set.mean, 0.25);
        }
        assert_eq!(report.min_over_sets, 0.25);
        assert_eq!(report.prompts_per_instance, 12);
    }

    #[test]
    fn the_gold_oracle_is_perfect_everywhere() {
        let data = gen_colors(3);
        let report =
            eval_consistency(&mut GoldOracle, &data.test[..10], &data.icl, 3, 0, true).unwrap();
        assert_eq!(report.sets.len(), 4);
        assert_eq!(report.min_over_sets, 1.0);
        assert_eq!(report.prompts_per_instance, 16);
        assert_eq!(report.ties, 0);
    }

    #[test]
    fn twelve_prompts_are_rendered_per_instance() {
        let data = gen_colors(3);
        let mut model = CountingModel { calls: 0 };
        let n = 7;
        eval_consistency(&mut model, &data.test[..n], &data.icl, 3, 0, false).unwrap();
        assert_eq!(model.calls, 12 * n);
    }

    #[test]
    fn min_over_sets_never_exceeds_any_mean() {
        struct Lumpy {
            i: usize,
        }
        impl ChoiceModel for Lumpy {
            fn answer_scores(&mut self, prompt: &RenderedPrompt) -> Result<[f64; 4]> {
                self.i += 1;
                let mut scores = [0.0; 4];
                // right on a drifting subset of prompts
                let pos = if self.i % 3 == 0 { prompt.gold_position } else { self.i % 4 };
                scores[pos] = 1.0;
                Ok(scores)
            }
        }
        let data = gen_colors(3);
        let report =
            eval_consistency(&mut Lumpy { i: 0 }, &data.test[..20], &data.icl, 3, 0, true)
                .unwrap();
        for set in &report.sets {
            assert!(report.min_over_sets <= set.mean + 1e-12);
        }
    }

    #[test]
    fn consistency_reports_are_deterministic() {
        let data = gen_colors(3);
        let a = eval_consistency(&mut GoldOracle, &data.test[..5], &data.icl, 3, 9, false)
            .unwrap();
        let b = eval_consistency(&mut GoldOracle, &data.test[..5], &data.icl, 3, 9, false)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generative_oracle_and_constant_baseline() {
        let data = gen_colors(3);
        let corpus = crate::data::colors::vocab_corpus(&data, &[]).unwrap();
        let vocab = Vocab::build(&corpus);

        struct GenOracle<'a> {
            vocab: &'a Vocab,
            answers: Vec<TokenId>,
            i: usize,
        }
        impl GenerativeModel for GenOracle<'_> {
            fn first_token(&mut self, _text: &str) -> Result<TokenId> {
                self.i += 1;
                Ok(self.answers[self.i - 1])
            }
        }
        let answers: Vec<TokenId> = data
            .test
            .iter()
            .map(|inst| crate::data::vocab::tokenize(inst.correct_answer()))
            .map(|toks| vocab.id(&toks[0]).unwrap())
            .collect();
        let mut oracle = GenOracle { vocab: &vocab, answers, i: 0 };
        let _ = &oracle.vocab;
        let acc = eval_generative(&mut oracle, &vocab, &data.test, &data.icl, 3).unwrap();
        assert_eq!(acc, 1.0);

        // yellow appears as the gold answer for exactly 10 of the 105 test
        // instances (one of the 11 yellow pairs is an in-context example)
        let yellow = vocab.id("yellow").unwrap();
        let acc =
            eval_generative(&mut ConstantToken(yellow), &vocab, &data.test, &data.icl, 0)
                .unwrap();
        assert!((acc - 10.0 / 105.0).abs() < 1e-12, "{acc}");
    }

    #[test]
    fn prompt_inputs_start_with_bos_and_carry_answer_ids() {
        let data = gen_colors(3);
        let corpus = crate::data::colors::vocab_corpus(&data, &[]).unwrap();
        let vocab = Vocab::build(&corpus);
        let spec = PromptSpec {
            symbols: SymbolSet::Abcd,
            correct_position: 2,
            shots: 3,
            icl_seed: 1,
        };
        let prompt = render_prompt(&data.test[0], &data.icl, &spec).unwrap();
        let inputs = PromptInputs::from_rendered(&vocab, &prompt).unwrap();
        assert_eq!(inputs.ids[0], crate::data::vocab::BOS);
        assert_eq!(inputs.gold_position, 2);
        assert_eq!(inputs.gold_symbol(), 'C');
        assert_eq!(inputs.gold_token_id(), vocab.symbol_id('C').unwrap());
        // the prompt round-trips, so the ids really encode the text
        assert_eq!(vocab.decode(&inputs.ids), prompt.text);
    }
}
