//! Datasets, vocabulary, and prompt rendering.

pub mod colors;
pub mod mcqa;
pub mod prompt;
pub mod vocab;

pub use colors::{gen_colors, ColorsDataset};
pub use mcqa::{load_mcqa_jsonl, save_mcqa_jsonl, McqaInstance};
pub use prompt::{
    render_generative, render_generative_shots, render_prompt, GenerativePrompt, PromptSpec,
    RenderedPrompt, SymbolSet,
};
pub use vocab::Vocab;
