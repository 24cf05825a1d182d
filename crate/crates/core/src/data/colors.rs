//! The Copying-Colors dataset: 108 object-color pairs over ten colors,
//! rendered into multiple-choice instances whose answer can be copied from
//! the context sentence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::mcqa::McqaInstance;
use crate::data::prompt::{render_generative, render_prompt, PromptSpec, SymbolSet};
use crate::error::Result;

pub const COLORS: [&str; 10] =
    ["yellow", "grey", "blue", "pink", "red", "green", "white", "black", "orange", "purple"];

/// Curated object-color pairs, interleaved round-robin over the colors so
/// the first three pairs (the in-context examples) have distinct colors.
const OBJECTS: [[&str; 11]; 10] = [
    // yellow
    ["Corn", "Butter", "Mustard", "Hay", "Straw", "Saffron", "Lemonade", "Pollen", "Yolk", "Honey", "Brass"],
    // grey
    ["Ash", "Concrete", "Granite", "Slate", "Fog", "Pewter", "Gravel", "Smoke", "Flint", "Aluminum", "Steel"],
    // blue (10 entries)
    ["Sky", "Denim", "Sapphire", "Lapis", "Ocean", "Cornflower", "Azurite", "Neptune", "Cobalt", "Water", ""],
    // pink (10 entries)
    ["Bubblegum", "Flamingo", "Blossom", "Taffy", "Grapefruit", "Peony", "Carnation", "Ham", "Candyfloss", "Eraser", ""],
    // red
    ["Blood", "Ketchup", "Lava", "Brick", "Salsa", "Paprika", "Beetroot", "Marinara", "Cinnabar", "Rhubarb", "Wine"],
    // green
    ["Grass", "Moss", "Spinach", "Lettuce", "Kale", "Broccoli", "Jade", "Emerald", "Seaweed", "Mint", "Clover"],
    // white
    ["Snow", "Milk", "Chalk", "Ivory", "Salt", "Flour", "Cotton", "Sugar", "Rice", "Paper", "Wool"],
    // black
    ["Coal", "Tar", "Soot", "Ink", "Charcoal", "Obsidian", "Asphalt", "Licorice", "Ebony", "Onyx", "Midnight"],
    // orange
    ["Pumpkin", "Carrot", "Apricot", "Cantaloupe", "Marmalade", "Papaya", "Turmeric", "Mango", "Persimmon", "Tangerine", "Amber"],
    // purple
    ["Lavender", "Eggplant", "Amethyst", "Plum", "Mulberry", "Wisteria", "Heather", "Lilac", "Grape", "Aubergine", "Iris"],
];

/// All 108 (object, color) pairs in their fixed list order.
pub fn color_pairs() -> Vec<(&'static str, &'static str)> {
    let mut out = Vec::with_capacity(108);
    for round in 0..11 {
        for (ci, color) in COLORS.iter().enumerate() {
            let object = OBJECTS[ci][round];
            if !object.is_empty() {
                out.push((object, *color));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorsDataset {
    /// The three in-context examples (first three pairs).
    pub icl: Vec<McqaInstance>,
    /// The remaining 105 instances.
    pub test: Vec<McqaInstance>,
}

impl ColorsDataset {
    pub fn all(&self) -> Vec<McqaInstance> {
        self.icl.iter().chain(&self.test).cloned().collect()
    }
}

/// Builds the dataset. For each pair the context states the color, the
/// question asks it back, and three distractor colors are drawn without
/// replacement from the remaining nine using the seeded generator. The same
/// seed yields a byte-identical dataset.
pub fn gen_colors(seed: u64) -> ColorsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(108);
    for (object, color) in color_pairs() {
        let mut others: Vec<&str> = COLORS.iter().copied().filter(|c| *c != color).collect();
        others.shuffle(&mut rng);
        let mut choices = vec![color.to_string()];
        choices.extend(others[..3].iter().map(|c| c.to_string()));
        instances.push(McqaInstance {
            question: format!("What color is {}?", lowercase_first(object)),
            choices,
            answer_index: 0,
            context: Some(format!("{object} is {color}.")),
        });
    }
    let test = instances.split_off(3);
    ColorsDataset { icl: instances, test }
}

fn lowercase_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Corpus the vocabulary is built from: every generative sentence plus one
/// fully rendered prompt per symbol set, so all template words, symbol
/// labels, and color words are covered.
pub fn vocab_corpus(dataset: &ColorsDataset, extra_symbols: &[SymbolSet]) -> Result<Vec<String>> {
    let mut corpus = Vec::new();
    for inst in dataset.all() {
        corpus.push(render_generative(&inst)?.text);
    }
    let mut sets = vec![SymbolSet::Abcd, SymbolSet::Qzrx, SymbolSet::Oebp, SymbolSet::Num1234];
    sets.extend_from_slice(extra_symbols);
    for symbols in sets {
        for position in 0..4 {
            let spec = PromptSpec { symbols, correct_position: position, shots: 3, icl_seed: 0 };
            corpus.push(render_prompt(&dataset.test[0], &dataset.icl, &spec)?.text);
        }
    }
    Ok(corpus)
}
