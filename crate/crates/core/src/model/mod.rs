//! The decoder-only transformer: configuration, weights, initialization,
//! forward pass with capture and patching hooks, and checkpoint IO.
//!
//! Architecture: learned token and absolute position embeddings, pre-LN
//! blocks `x -> x + MHSA(LN1(x)) -> + MLP(LN2(.))`, parametric layer norms,
//! exact-GELU MLPs without biases, a final layer norm, and an untied
//! unembedding. Attention output is accumulated head by head so per-head
//! contributions are exact summands of the attention output.

pub mod checkpoint;
pub mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    decompose_heads, forward, HookSite, Patch, Site, TokenPos, TraceCapture,
};

/// Layer-norm epsilon, fixed across the model.
pub const LN_EPS: f64 = 1e-5;
/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
}

impl ModelConfig {
    /// Config with the default feed-forward width of `4 * d_model`.
    pub fn new(layers: usize, heads: usize, d_model: usize, vocab_size: usize, max_seq: usize) -> Self {
        ModelConfig { layers, heads, d_model, d_ff: 4 * d_model, vocab_size, max_seq }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.d_model == 0
            || self.d_ff == 0
            || self.vocab_size == 0
            || self.max_seq == 0
        {
            return Err(Error::Config(format!("all config dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<F> {
    pub ln1_gain: TensorBase<F>,
    pub ln1_bias: TensorBase<F>,
    pub wq: TensorBase<F>,
    pub wk: TensorBase<F>,
    pub wv: TensorBase<F>,
    /// Attention output projection; rows `h*head_dim..(h+1)*head_dim` carry
    /// head `h`'s contribution.
    pub wo: TensorBase<F>,
    pub ln2_gain: TensorBase<F>,
    pub ln2_bias: TensorBase<F>,
    pub w_in: TensorBase<F>,
    pub w_out: TensorBase<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub config: ModelConfig,
    /// `[vocab_size, d_model]`
    pub token_embed: TensorBase<F>,
    /// `[max_seq, d_model]`
    pub pos_embed: TensorBase<F>,
    pub blocks: Vec<BlockWeights<F>>,
    pub final_ln_gain: TensorBase<F>,
    pub final_ln_bias: TensorBase<F>,
    /// `[vocab_size, d_model]`, untied from the token embedding.
    pub unembed: TensorBase<F>,
}

/// Draws all projection and embedding weights from N(0, 0.02^2) in a fixed
/// traversal order; layer-norm gains start at one and biases at zero. The
/// same seed always produces bitwise-identical weights.
pub fn init_weights<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<Weights<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |shape: &[usize]| -> TensorBase<F> {
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::from_f64_(z * INIT_STD)
            })
            .collect();
        TensorBase::from_vec(shape, data).expect("init shape")
    };

    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let token_embed = gaussian(&[v, d]);
    let pos_embed = gaussian(&[config.max_seq, d]);
    let mut blocks = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        blocks.push(BlockWeights {
            ln1_gain: ones(d),
            ln1_bias: TensorBase::zeros(&[d]),
            wq: gaussian(&[d, d]),
            wk: gaussian(&[d, d]),
            wv: gaussian(&[d, d]),
            wo: gaussian(&[d, d]),
            ln2_gain: ones(d),
            ln2_bias: TensorBase::zeros(&[d]),
            w_in: gaussian(&[d, f]),
            w_out: gaussian(&[f, d]),
        });
    }
    let final_ln_gain = ones(d);
    let final_ln_bias = TensorBase::zeros(&[d]);
    let unembed = gaussian(&[v, d]);
    Ok(Weights { config: *config, token_embed, pos_embed, blocks, final_ln_gain, final_ln_bias, unembed })
}

fn ones<F: Scalar>(n: usize) -> TensorBase<F> {
    TensorBase::from_vec(&[n], vec![F::one(); n]).expect("ones")
}

impl<F: Scalar> Weights<F> {
    /// All-zero weights with the shapes implied by `config`, in particular
    /// layer-norm gains of zero. Useful as a gradient or moment accumulator
    /// and as the target of checkpoint loading, not as a runnable model.
    pub fn zeros(config: &ModelConfig) -> Result<Weights<F>> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let blocks = (0..config.layers)
            .map(|_| BlockWeights {
                ln1_gain: TensorBase::zeros(&[d]),
                ln1_bias: TensorBase::zeros(&[d]),
                wq: TensorBase::zeros(&[d, d]),
                wk: TensorBase::zeros(&[d, d]),
                wv: TensorBase::zeros(&[d, d]),
                wo: TensorBase::zeros(&[d, d]),
                ln2_gain: TensorBase::zeros(&[d]),
                ln2_bias: TensorBase::zeros(&[d]),
                w_in: TensorBase::zeros(&[d, f]),
                w_out: TensorBase::zeros(&[f, d]),
            })
            .collect();
        Ok(Weights {
            config: *config,
            token_embed: TensorBase::zeros(&[v, d]),
            pos_embed: TensorBase::zeros(&[config.max_seq, d]),
            blocks,
            final_ln_gain: TensorBase::zeros(&[d]),
            final_ln_bias: TensorBase::zeros(&[d]),
            unembed: TensorBase::zeros(&[v, d]),
        })
    }

    /// Every tensor with its canonical name, in a fixed traversal order that
    /// checkpoints and optimizers share: embeddings, then each block's
    /// norms and projections, then the final norm and unembedding.
    pub fn named(&self) -> Vec<(String, &TensorBase<F>)> {
        let mut out: Vec<(String, &TensorBase<F>)> = vec![
            ("token_embed".into(), &self.token_embed),
            ("pos_embed".into(), &self.pos_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("layers.{i}.ln1_gain"), &b.ln1_gain));
            out.push((format!("layers.{i}.ln1_bias"), &b.ln1_bias));
            out.push((format!("layers.{i}.wq"), &b.wq));
            out.push((format!("layers.{i}.wk"), &b.wk));
            out.push((format!("layers.{i}.wv"), &b.wv));
            out.push((format!("layers.{i}.wo"), &b.wo));
            out.push((format!("layers.{i}.ln2_gain"), &b.ln2_gain));
            out.push((format!("layers.{i}.ln2_bias"), &b.ln2_bias));
            out.push((format!("layers.{i}.w_in"), &b.w_in));
            out.push((format!("layers.{i}.w_out"), &b.w_out));
        }
        out.push(("final_ln_gain".into(), &self.final_ln_gain));
        out.push(("final_ln_bias".into(), &self.final_ln_bias));
        out.push(("unembed".into(), &self.unembed));
        out
    }

    /// Mutable variant of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut TensorBase<F>)> {
        let mut out: Vec<(String, &mut TensorBase<F>)> = vec![
            ("token_embed".into(), &mut self.token_embed),
            ("pos_embed".into(), &mut self.pos_embed),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("layers.{i}.ln1_gain"), &mut b.ln1_gain));
            out.push((format!("layers.{i}.ln1_bias"), &mut b.ln1_bias));
            out.push((format!("layers.{i}.wq"), &mut b.wq));
            out.push((format!("layers.{i}.wk"), &mut b.wk));
            out.push((format!("layers.{i}.wv"), &mut b.wv));
            out.push((format!("layers.{i}.wo"), &mut b.wo));
            out.push((format!("layers.{i}.ln2_gain"), &mut b.ln2_gain));
            out.push((format!("layers.{i}.ln2_bias"), &mut b.ln2_bias));
            out.push((format!("layers.{i}.w_in"), &mut b.w_in));
            out.push((format!("layers.{i}.w_out"), &mut b.w_out));
        }
        out.push(("final_ln_gain".into(), &mut self.final_ln_gain));
        out.push(("final_ln_bias".into(), &mut self.final_ln_bias));
        out.push(("unembed".into(), &mut self.unembed));
        out
    }

    pub fn cast<G: Scalar>(&self) -> Weights<G> {
        Weights {
            config: self.config,
            token_embed: self.token_embed.cast(),
            pos_embed: self.pos_embed.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    ln1_gain: b.ln1_gain.cast(),
                    ln1_bias: b.ln1_bias.cast(),
                    wq: b.wq.cast(),
                    wk: b.wk.cast(),
                    wv: b.wv.cast(),
                    wo: b.wo.cast(),
                    ln2_gain: b.ln2_gain.cast(),
                    ln2_bias: b.ln2_bias.cast(),
                    w_in: b.w_in.cast(),
                    w_out: b.w_out.cast(),
                })
                .collect(),
            final_ln_gain: self.final_ln_gain.cast(),
            final_ln_bias: self.final_ln_bias.cast(),
            unembed: self.unembed.cast(),
        }
    }
}
