//! Word-level vocabulary with spaced answer-symbol tokens.
//!
//! Tokens are words (alphanumeric runs), single punctuation characters, and
//! the newline character. A space followed by a single-character word fuses
//! into one token that keeps its leading space (" A", " 2", ...), which is
//! how answer symbols stay single tokens. Encoding and decoding are inverse
//! on any text whose spacing follows these conventions, including every
//! rendered prompt.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

pub const BOS: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS_TOKEN: &str = "<s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Symbol characters from the four standard answer-symbol sets, in
/// force-insertion order.
const STANDARD_SYMBOLS: [char; 15] =
    ['A', 'B', 'C', 'D', 'Q', 'Z', 'R', 'X', 'O', 'E', 'P', '1', '2', '3', '4'];

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

/// Splits text into vocabulary tokens. See the module docs for the rules.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut pending_space = false;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            if pending_space {
                out.push(" ".to_string());
                pending_space = false;
            }
            out.push("\n".to_string());
            i += 1;
        } else if c == ' ' {
            if pending_space {
                out.push(" ".to_string());
            }
            pending_space = true;
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if pending_space && word.chars().count() == 1 {
                out.push(format!(" {word}"));
            } else {
                out.push(word);
            }
            pending_space = false;
        } else {
            if pending_space {
                out.push(" ".to_string());
                pending_space = false;
            }
            out.push(c.to_string());
            i += 1;
        }
    }
    if pending_space {
        out.push(" ".to_string());
    }
    out
}

impl Vocab {
    /// Builds a vocabulary from a corpus: reserved tokens first, then every
    /// spaced symbol token of the standard sets, then corpus tokens in first
    /// occurrence order.
    pub fn build(corpus: &[String]) -> Vocab {
        let mut vocab = Vocab { tokens: Vec::new(), index: HashMap::new() };
        vocab.insert(BOS_TOKEN);
        vocab.insert(UNK_TOKEN);
        for c in STANDARD_SYMBOLS {
            vocab.insert(&format!(" {c}"));
        }
        for text in corpus {
            for tok in tokenize(text) {
                vocab.insert(&tok);
            }
        }
        vocab
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            let id = self.tokens.len() as TokenId;
            self.tokens.push(token.to_string());
            self.index.insert(token.to_string(), id);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of the spaced symbol token for `symbol`, e.g. 'A' -> " A".
    pub fn symbol_id(&self, symbol: char) -> Result<TokenId> {
        self.id(&format!(" {symbol}"))
            .ok_or_else(|| Error::Vocab(format!("symbol token \" {symbol}\" not in vocabulary")))
    }

    /// Encodes text; tokens outside the vocabulary map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// Encodes text, rejecting tokens outside the vocabulary.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<TokenId>> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).ok_or_else(|| Error::Vocab(format!("unknown token {t:?}"))))
            .collect()
    }

    /// Inverse of [`encode`]: words are joined by single spaces except at the
    /// start of a line; newlines, punctuation, and space-prefixed tokens are
    /// concatenated directly.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == BOS {
                continue;
            }
            let tok = self.token(id).unwrap_or(UNK_TOKEN);
            let first = tok.chars().next().unwrap_or(' ');
            let is_word = first.is_alphanumeric() || tok == UNK_TOKEN;
            if is_word && !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    /// One escaped token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for tok in &self.tokens {
            body.push_str(&tok.replace('\\', "\\\\").replace('\n', "\\n"));
            body.push('\n');
        }
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let body = std::fs::read_to_string(path)?;
        let mut vocab = Vocab { tokens: Vec::new(), index: HashMap::new() };
        for (lineno, line) in body.lines().enumerate() {
            let tok = unescape(line)
                .map_err(|e| Error::Record { line: lineno + 1, message: e })?;
            if vocab.index.contains_key(&tok) {
                return Err(Error::Record {
                    line: lineno + 1,
                    message: format!("duplicate token {tok:?}"),
                });
            }
            vocab.insert(&tok);
        }
        if vocab.token(BOS) != Some(BOS_TOKEN) || vocab.token(UNK) != Some(UNK_TOKEN) {
            return Err(Error::Vocab("vocabulary file lacks reserved tokens".into()));
        }
        Ok(vocab)
    }
}

fn unescape(line: &str) -> std::result::Result<String, String> {
    let mut out = String::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            other => return Err(format!("bad escape {other:?}")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_words_punctuation_and_newlines() {
        assert_eq!(tokenize("Corn is yellow."), vec!["Corn", "is", "yellow", "."]);
        assert_eq!(tokenize("Choices:\nA. red"), vec!["Choices", ":", "\n", "A", ".", "red"]);
    }

    #[test]
    fn tokenize_fuses_spaced_single_characters() {
        assert_eq!(tokenize("is: A\n"), vec!["is", ":", " A", "\n"]);
        assert_eq!(tokenize("is: 2"), vec!["is", ":", " 2"]);
        assert_eq!(tokenize(" Corn"), vec!["Corn"]);
    }

    #[test]
    fn build_contains_corpus_words_and_all_symbol_tokens() {
        let vocab = Vocab::build(&["Corn is yellow.".to_string()]);
        for tok in ["Corn", "is", "yellow", "."] {
            assert!(vocab.id(tok).is_some(), "missing {tok:?}");
        }
        for c in STANDARD_SYMBOLS {
            assert!(vocab.id(&format!(" {c}")).is_some(), "missing symbol {c}");
        }
        assert_eq!(vocab.id(BOS_TOKEN), Some(BOS));
        assert_eq!(vocab.id(UNK_TOKEN), Some(UNK));
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = vec!["Snow is white. What color is snow?".to_string()];
        let a = Vocab::build(&corpus);
        let b = Vocab::build(&corpus);
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn symbol_tokens_encode_as_single_tokens() {
        let vocab = Vocab::build(&[]);
        for c in STANDARD_SYMBOLS {
            let ids = vocab.encode(&format!(" {c}"));
            assert_eq!(ids.len(), 1, "symbol {c} split into {ids:?}");
            assert_eq!(ids[0], vocab.symbol_id(c).unwrap());
        }
    }

    #[test]
    fn encode_decode_round_trips_prompt_like_text() {
        let text = "Phrase: Corn is yellow. What color is corn?\nChoices:\nA. yellow\nB. grey\nThe correct answer is: A";
        let vocab = Vocab::build(&[text.to_string()]);
        let ids = vocab.encode_strict(text).unwrap();
        assert_eq!(vocab.decode(&ids), text);
    }

    #[test]
    fn decode_encode_decode_is_a_fixed_point() {
        use rand::{RngExt, SeedableRng};
        let corpus = vec!["Snow is white. What color is snow?\nChoices:\n1. grey".to_string()];
        let vocab = Vocab::build(&corpus);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let ids: Vec<TokenId> =
                (0..20).map(|_| rng.random_range(2..vocab.len() as TokenId)).collect();
            let text = vocab.decode(&ids);
            let re = vocab.encode_strict(&text).unwrap();
            assert_eq!(vocab.decode(&re), text);
        }
    }

    #[test]
    fn encode_strict_rejects_unknown_tokens() {
        let vocab = Vocab::build(&["Corn is yellow.".to_string()]);
        assert!(vocab.encode_strict("Corn is purple.").is_err());
        assert_eq!(vocab.encode("Corn is purple."), vec![
            vocab.id("Corn").unwrap(),
            vocab.id("is").unwrap(),
            UNK,
            vocab.id(".").unwrap()
        ]);
    }

    #[test]
    fn save_load_round_trips_including_newline_token() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocab::build(&["a b\nc \\ d".to_string()]);
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(vocab.tokens, loaded.tokens);
    }

    #[test]
    fn load_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "<s>\n<unk>\nfoo\nfoo\n").unwrap();
        let err = Vocab::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
