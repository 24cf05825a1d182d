//! Prompt rendering for formatted multiple-choice QA and the generative
//! variant of the same instances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::mcqa::McqaInstance;
use crate::data::vocab::Vocab;
use crate::error::{Error, Result};
use crate::TokenId;

/// Header line of every formatted prompt, kept byte-for-byte fixed.
pub const PROMPT_HEADER: &str = "For each of the following phrases, select the\nbest completion.\n";
/// Literal suffix every formatted prompt ends with.
pub const ANSWER_CUE: &str = "The correct answer is:";

/// The four-symbol alphabet used to label the choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolSet {
    Abcd,
    Qzrx,
    Oebp,
    Num1234,
    Custom([char; 4]),
}

impl SymbolSet {
    pub fn chars(&self) -> [char; 4] {
        match self {
            SymbolSet::Abcd => ['A', 'B', 'C', 'D'],
            SymbolSet::Qzrx => ['Q', 'Z', 'R', 'X'],
            SymbolSet::Oebp => ['O', 'E', 'B', 'P'],
            SymbolSet::Num1234 => ['1', '2', '3', '4'],
            SymbolSet::Custom(c) => *c,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SymbolSet::Abcd => "ABCD".into(),
            SymbolSet::Qzrx => "QZRX".into(),
            SymbolSet::Oebp => "OEBP".into(),
            SymbolSet::Num1234 => "1234".into(),
            SymbolSet::Custom(c) => format!("custom:{}", c.iter().collect::<String>()),
        }
    }

    /// Parses `ABCD`, `QZRX`, `OEBP`, `1234`, or `custom:WXYZ`.
    pub fn parse(s: &str) -> Result<SymbolSet> {
        match s {
            "ABCD" => Ok(SymbolSet::Abcd),
            "QZRX" => Ok(SymbolSet::Qzrx),
            "OEBP" => Ok(SymbolSet::Oebp),
            "1234" => Ok(SymbolSet::Num1234),
            other => {
                let spec = other.strip_prefix("custom:").ok_or_else(|| {
                    Error::Config(format!(
                        "unknown symbol set {other:?} (expected ABCD, QZRX, OEBP, 1234, or custom:WXYZ)"
                    ))
                })?;
                let chars: Vec<char> = spec.chars().collect();
                if chars.len() != 4 || !chars.iter().all(|c| c.is_alphanumeric()) {
                    return Err(Error::Config(format!(
                        "custom symbol set needs 4 alphanumeric characters, got {spec:?}"
                    )));
                }
                let mut arr = ['\0'; 4];
                arr.copy_from_slice(&chars);
                if arr.iter().collect::<std::collections::HashSet<_>>().len() != 4 {
                    return Err(Error::Config(format!("custom symbols must be distinct: {spec:?}")));
                }
                Ok(SymbolSet::Custom(arr))
            }
        }
    }

    /// The three symbol sets the consistency protocol evaluates.
    pub fn evaluated() -> [SymbolSet; 3] {
        [SymbolSet::Abcd, SymbolSet::Qzrx, SymbolSet::Num1234]
    }

    /// The spaced single-token string of the symbol at `position`.
    pub fn answer_token(&self, position: usize) -> String {
        format!(" {}", self.chars()[position])
    }
}

/// How to render one formatted prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub symbols: SymbolSet,
    /// Where the correct answer is displayed, 0..=3.
    pub correct_position: usize,
    /// Number of in-context examples, 0 or 3.
    pub shots: usize,
    /// Seed that shuffles the in-context gold positions {0, 1, 2}.
    pub icl_seed: u64,
}

/// A formatted prompt plus everything needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub symbols: SymbolSet,
    /// Choice strings in displayed order.
    pub choices: [String; 4],
    /// Displayed position of the correct answer.
    pub gold_position: usize,
    /// Gold positions assigned to the in-context examples.
    pub icl_positions: Vec<usize>,
}

impl RenderedPrompt {
    pub fn gold_symbol(&self) -> char {
        self.symbols.chars()[self.gold_position]
    }

    /// Ids of the four spaced answer-symbol tokens in displayed order.
    pub fn answer_token_ids(&self, vocab: &Vocab) -> Result<[TokenId; 4]> {
        let chars = self.symbols.chars();
        Ok([
            vocab.symbol_id(chars[0])?,
            vocab.symbol_id(chars[1])?,
            vocab.symbol_id(chars[2])?,
            vocab.symbol_id(chars[3])?,
        ])
    }

    pub fn gold_token_id(&self, vocab: &Vocab) -> Result<TokenId> {
        vocab.symbol_id(self.gold_symbol())
    }
}

/// Moves the correct choice to `target`, keeping the distractors in their
/// original relative order.
fn place_correct(inst: &McqaInstance, target: usize) -> [String; 4] {
    let mut rest: Vec<&String> =
        inst.choices.iter().enumerate().filter(|(i, _)| *i != inst.answer_index).map(|(_, c)| c).collect();
    let mut out: [String; 4] = Default::default();
    out[target] = inst.choices[inst.answer_index].clone();
    for (i, slot) in out.iter_mut().enumerate() {
        if i != target {
            *slot = rest.remove(0).clone();
        }
    }
    out
}

fn render_block(inst: &McqaInstance, symbols: SymbolSet, correct_position: usize) -> (String, [String; 4]) {
    let choices = place_correct(inst, correct_position);
    let phrase = match &inst.context {
        Some(ctx) => format!("{ctx} {}", inst.question),
        None => inst.question.clone(),
    };
    let chars = symbols.chars();
    let mut text = format!("Phrase: {phrase}\nChoices:\n");
    for (c, choice) in chars.iter().zip(&choices) {
        text.push_str(&format!("{c}. {choice}\n"));
    }
    text.push_str(ANSWER_CUE);
    (text, choices)
}

fn validate_instance(inst: &McqaInstance) -> Result<()> {
    if inst.choices.len() != 4 {
        return Err(Error::Config(format!("instance needs 4 choices, got {}", inst.choices.len())));
    }
    if inst.answer_index >= 4 {
        return Err(Error::Config(format!("answer_index {} out of range", inst.answer_index)));
    }
    Ok(())
}

/// Renders one formatted prompt: fixed header, `spec.shots` in-context
/// examples answered with their gold symbols, then the query block ending in
/// the literal answer cue. In-context gold positions are the deterministic
/// shuffle of {0, 1, 2} by `spec.icl_seed`.
pub fn render_prompt(
    inst: &McqaInstance,
    icl: &[McqaInstance],
    spec: &PromptSpec,
) -> Result<RenderedPrompt> {
    validate_instance(inst)?;
    if spec.correct_position >= 4 {
        return Err(Error::Config(format!(
            "correct_position {} out of range",
            spec.correct_position
        )));
    }
    if spec.shots != 0 && spec.shots != 3 {
        return Err(Error::Config(format!("shots must be 0 or 3, got {}", spec.shots)));
    }
    if spec.shots > icl.len() {
        return Err(Error::Config(format!(
            "{} shots requested but only {} in-context instances given",
            spec.shots,
            icl.len()
        )));
    }

    let icl_positions = if spec.shots == 0 {
        Vec::new()
    } else {
        let mut positions = vec![0usize, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.icl_seed);
        positions.shuffle(&mut rng);
        positions
    };

    let mut text = String::from(PROMPT_HEADER);
    text.push('\n');
    for (ex, &pos) in icl.iter().take(spec.shots).zip(&icl_positions) {
        validate_instance(ex)?;
        let (block, _) = render_block(ex, spec.symbols, pos);
        text.push_str(&block);
        text.push_str(&spec.symbols.answer_token(pos));
        text.push_str("\n\n");
    }
    let (block, choices) = render_block(inst, spec.symbols, spec.correct_position);
    text.push_str(&block);

    Ok(RenderedPrompt {
        text,
        symbols: spec.symbols,
        choices,
        gold_position: spec.correct_position,
        icl_positions,
    })
}

/// Generative rendering of an instance with a context sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativePrompt {
    pub text: String,
    /// The word the next generated token should be.
    pub target: String,
}

/// Zero-shot generative prompt: " <Context> <Question>" with the correct
/// choice as the expected next word.
pub fn render_generative(inst: &McqaInstance) -> Result<GenerativePrompt> {
    validate_instance(inst)?;
    let ctx = inst
        .context
        .as_deref()
        .ok_or_else(|| Error::Config("generative rendering needs a context sentence".into()))?;
    Ok(GenerativePrompt {
        text: format!(" {ctx} {}", inst.question),
        target: inst.correct_answer().to_string(),
    })
}

/// Few-shot generative prompt: each in-context example is answered with its
/// correct word and a period, then the query follows unanswered.
pub fn render_generative_shots(
    inst: &McqaInstance,
    icl: &[McqaInstance],
    shots: usize,
) -> Result<GenerativePrompt> {
    if shots > icl.len() {
        return Err(Error::Config(format!(
            "{} shots requested but only {} in-context instances given",
            shots,
            icl.len()
        )));
    }
    let mut text = String::new();
    for ex in icl.iter().take(shots) {
        let g = render_generative(ex)?;
        text.push_str(&g.text);
        text.push_str(&format!(" {}.", g.target));
    }
    let query = render_generative(inst)?;
    text.push_str(&query.text);
    Ok(GenerativePrompt { text, target: query.target })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corn() -> McqaInstance {
        McqaInstance {
            question: "What color is corn?".into(),
            choices: vec!["yellow".into(), "grey".into(), "blue".into(), "pink".into()],
            answer_index: 0,
            context: Some("Corn is yellow.".into()),
        }
    }

    fn spec(symbols: SymbolSet, pos: usize) -> PromptSpec {
        PromptSpec { symbols, correct_position: pos, shots: 0, icl_seed: 0 }
    }

    #[test]
    fn renders_the_golden_template() {
        let rendered = render_prompt(&corn(), &[], &spec(SymbolSet::Abcd, 0)).unwrap();
        let golden = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../golden/prompt_template.txt"
        ))
        .unwrap();
        assert_eq!(rendered.text, golden);
        assert!(rendered.text.ends_with(ANSWER_CUE));
        assert_eq!(rendered.gold_symbol(), 'A');
    }

    #[test]
    fn numeric_symbols_relabel_the_same_choices() {
        let rendered = render_prompt(&corn(), &[], &spec(SymbolSet::Num1234, 1)).unwrap();
        assert!(rendered.text.contains("1. grey\n2. yellow\n3. blue\n4. pink"));
        assert_eq!(rendered.gold_symbol(), '2');
        assert_eq!(rendered.choices[1], "yellow");
    }

    #[test]
    fn permuting_to_position_three_keeps_the_correct_answer_there() {
        let rendered = render_prompt(&corn(), &[], &spec(SymbolSet::Abcd, 3)).unwrap();
        assert_eq!(rendered.choices[3], "yellow");
        assert_eq!(rendered.choices[0], "grey");
        assert_eq!(rendered.gold_symbol(), 'D');
    }

    #[test]
    fn position_variants_share_the_same_answer_strings() {
        use std::collections::BTreeSet;
        let mut symbols_seen = BTreeSet::new();
        let mut sets = Vec::new();
        for pos in 0..4 {
            let r = render_prompt(&corn(), &[], &spec(SymbolSet::Abcd, pos)).unwrap();
            sets.push(BTreeSet::from_iter(r.choices.iter().cloned()));
            symbols_seen.insert(r.gold_symbol());
        }
        assert!(sets.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(symbols_seen.len(), 4);
    }

    #[test]
    fn three_shot_prompts_answer_each_example() {
        let icl = vec![
            McqaInstance {
                question: "What color is snow?".into(),
                choices: vec!["white".into(), "red".into(), "green".into(), "black".into()],
                answer_index: 0,
                context: Some("Snow is white.".into()),
            },
            McqaInstance {
                question: "What color is coal?".into(),
                choices: vec!["black".into(), "pink".into(), "orange".into(), "blue".into()],
                answer_index: 0,
                context: Some("Coal is black.".into()),
            },
            McqaInstance {
                question: "What color is grass?".into(),
                choices: vec!["green".into(), "purple".into(), "grey".into(), "red".into()],
                answer_index: 0,
                context: Some("Grass is green.".into()),
            },
        ];
        let spec = PromptSpec { symbols: SymbolSet::Abcd, correct_position: 2, shots: 3, icl_seed: 9 };
        let r = render_prompt(&corn(), &icl, &spec).unwrap();
        assert_eq!(r.icl_positions.len(), 3);
        assert_eq!(
            BTreeSetOf(&r.icl_positions),
            BTreeSetOf(&[0, 1, 2]),
            "icl positions are a permutation of 0..3"
        );
        assert_eq!(r.text.matches("Phrase:").count(), 4);
        assert_eq!(r.text.matches(ANSWER_CUE).count(), 4);
        assert!(r.text.ends_with(ANSWER_CUE));
        // every answered block names the symbol at its assigned position
        for (ex, &pos) in icl.iter().zip(&r.icl_positions) {
            let sym = spec.symbols.chars()[pos];
            let want = format!("{}. {}\n", sym, ex.correct_answer());
            assert!(r.text.contains(&want), "missing {want:?}");
        }
        // deterministic for a fixed icl seed
        let again = render_prompt(&corn(), &icl, &spec).unwrap();
        assert_eq!(r, again);
    }

    #[allow(non_snake_case)]
    fn BTreeSetOf(v: &[usize]) -> std::collections::BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(render_prompt(&corn(), &[], &spec(SymbolSet::Abcd, 4)).is_err());
        let bad_shots = PromptSpec { symbols: SymbolSet::Abcd, correct_position: 0, shots: 2, icl_seed: 0 };
        assert!(render_prompt(&corn(), &[], &bad_shots).is_err());
        let no_icl = PromptSpec { symbols: SymbolSet::Abcd, correct_position: 0, shots: 3, icl_seed: 0 };
        assert!(render_prompt(&corn(), &[], &no_icl).is_err());
    }

    #[test]
    fn parses_symbol_sets() {
        assert_eq!(SymbolSet::parse("ABCD").unwrap(), SymbolSet::Abcd);
        assert_eq!(SymbolSet::parse("1234").unwrap(), SymbolSet::Num1234);
        assert_eq!(
            SymbolSet::parse("custom:WXYZ").unwrap(),
            SymbolSet::Custom(['W', 'X', 'Y', 'Z'])
        );
        assert!(SymbolSet::parse("abcd").is_err());
        assert!(SymbolSet::parse("custom:WXY").is_err());
        assert!(SymbolSet::parse("custom:WWXY").is_err());
    }

    #[test]
    fn generative_prompt_matches_fixed_form() {
        let g = render_generative(&corn()).unwrap();
        assert_eq!(g.text, " Corn is yellow. What color is corn?");
        assert_eq!(g.target, "yellow");
        assert!(g.text.contains(&g.target), "target word appears in the context");
    }

    #[test]
    fn generative_three_shot_has_four_questions() {
        let icl = vec![corn(), corn(), corn()];
        let g = render_generative_shots(&corn(), &icl, 3).unwrap();
        assert_eq!(g.text.matches('?').count(), 4);
        assert!(g.text.ends_with("What color is corn?"));
    }

    #[test]
    fn generative_requires_context() {
        let inst = McqaInstance {
            question: "Pick.".into(),
            choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            answer_index: 0,
            context: None,
        };
        assert!(render_generative(&inst).is_err());
    }
}
