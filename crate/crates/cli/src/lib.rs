//! Command-line surface for the interpretability engine: dataset
//! generation, training, evaluation, lens/patching/heatmap experiments,
//! and checkpoint sweeps, each writing CSV tables and deterministic SVG
//! figures under a run directory with a manifest.

pub mod args;
pub mod csvout;
pub mod manifest;
pub mod run;
pub mod svg;
