//! Central-finite-difference verification of the analytic gradients.
//!
//! Every comparison runs in f64. For each parameter tensor a fixed seeded
//! subsample of coordinates is perturbed by ±h and the two-sided slope of
//! the batch loss is compared against the analytic gradient under a
//! guarded relative error: |g - ĝ| / max(|g|, |ĝ|, floor). The floor keeps
//! near-zero coordinates from amplifying discretization noise into huge
//! ratios without hiding genuinely wrong gradients.

use std::collections::BTreeSet;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{init_weights, ModelConfig, Weights};
use crate::train::backward::{seq_loss, seq_loss_and_grad};
use crate::TokenId;

/// Relative-error guard; denominators never drop below this.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// One verified coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
    pub h: f64,
    pub floor: f64,
}

impl GradCheckReport {
    /// The worst coordinate, for error messages.
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).expect("finite errors"))
    }
}

fn batch_loss(weights: &Weights<f64>, sequences: &[Vec<TokenId>]) -> Result<f64> {
    let mut total = 0.0;
    for ids in sequences {
        let (loss, _) = seq_loss(weights, ids)?;
        total += loss;
    }
    Ok(total)
}

/// Compares analytic gradients of the summed batch loss against central
/// finite differences on `coords_per_tensor` seeded coordinates of every
/// parameter tensor. `weights` is perturbed in place and restored exactly.
pub fn grad_check(
    weights: &mut Weights<f64>,
    sequences: &[Vec<TokenId>],
    coords_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let config = weights.config.clone();
    let mut grads = Weights::<f64>::zeros(&config)?;
    for ids in sequences {
        seq_loss_and_grad(weights, ids, &mut grads)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = weights.named().len();
    let mut coords = Vec::new();
    for tensor_index in 0..n_tensors {
        let len = weights.named()[tensor_index].1.data().len();
        let mut picked = BTreeSet::new();
        while picked.len() < coords_per_tensor.min(len) {
            picked.insert(rng.random_range(0..len));
        }
        for index in picked {
            let name = weights.named()[tensor_index].0.clone();
            let analytic = grads.named()[tensor_index].1.data()[index];
            let original = weights.named()[tensor_index].1.data()[index];

            weights.named_mut()[tensor_index].1.data_mut()[index] = original + h;
            let plus = batch_loss(weights, sequences)?;
            weights.named_mut()[tensor_index].1.data_mut()[index] = original - h;
            let minus = batch_loss(weights, sequences)?;
            weights.named_mut()[tensor_index].1.data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let abs_err = (analytic - numeric).abs();
            let rel_err = abs_err / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            coords.push(CoordCheck { tensor: name, index, analytic, numeric, abs_err, rel_err });
        }
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { coords, max_rel_err, h, floor: GRAD_CHECK_FLOOR })
}

/// The tiny configuration used for gradient verification: 2 layers, 2
/// heads, d_model 16, sequences of length 8.
pub fn tiny_grad_config() -> ModelConfig {
    ModelConfig::new(2, 2, 16, 24, 8)
}

/// Seeded batch of short random sequences over the tiny config's vocab.
pub fn tiny_grad_sequences(seed: u64, count: usize) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    (0..count)
        .map(|_| {
            let mut ids = vec![0u32];
            for _ in 1..8 {
                ids.push(rng.random_range(0..24) as TokenId);
            }
            ids
        })
        .collect()
}

/// Full gradient check on the tiny config with default sampling density
/// and step size h = 1e-3.
pub fn grad_check_tiny(seed: u64) -> Result<GradCheckReport> {
    let config = tiny_grad_config();
    let mut weights = init_weights::<f64>(&config, seed)?;
    let sequences = tiny_grad_sequences(seed, 4);
    grad_check(&mut weights, &sequences, 6, 1e-3, seed)
}
