//! Interpretability engine for formatted multiple-choice QA on small
//! decoder-only transformers.
//!
//! The crate covers the full experiment loop: a word-level vocabulary and
//! prompt renderer for the Copying-Colors task, a from-scratch transformer
//! with residual-stream capture and activation patching, vocabulary
//! projection of intermediate states, consistency evaluation across symbol
//! sets and answer positions, and a deterministic trainer with checkpoint
//! sweeps.
//!
//! Numeric kernels are generic over the scalar type ([`scalar::Scalar`]);
//! the aliases below fix the concrete types used by experiments (f32) and
//! by reference oracles (f64).

pub mod data;
pub mod error;
pub mod eval;
pub mod interp;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Tensor type used by experiments.
pub type Tensor = tensor::TensorBase<f32>;
/// Double-precision tensor used by oracles and gradient checks.
pub type Tensor64 = tensor::TensorBase<f64>;
/// Vocabulary token id.
pub type TokenId = u32;
