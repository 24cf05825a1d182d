//! Interpretability methods: vocabulary projection of intermediate states,
//! activation patching between prompt pairs, and per-head score heatmaps.

pub mod heatmap;
pub mod lens;
pub mod patch;

pub use heatmap::{head_heatmap, HeadHeatmap, HeatmapCell};
pub use lens::{
    aggregate_lens, default_lens_sites, lens_sweep, vocab_project, LensAggregate,
    ProjectionMode, ProjectionRecord,
};
pub use patch::{
    activation_patch, patch_pair, patch_sweep, PatchGuard, PatchOutcome, PatchRow, PatchSweep,
    SiteFamily, SweepCell,
};
