//! Forward pass with residual-stream capture and activation patching.
//!
//! Sites address the additive structure of the network: the embedding
//! stream, each block's attention and MLP contributions (per head if
//! requested), each block's output, and the final logits. A patch replaces
//! the value at a site before it flows downstream; substituting a value
//! captured at the same site reproduces the unpatched run bitwise, because
//! the patched run performs the identical arithmetic on identical numbers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights, LN_EPS};
use crate::scalar::Scalar;
use crate::tensor::kernels;
use crate::TokenId;

/// Token position a hook applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenPos {
    /// The final position of the sequence, whatever its length.
    Last,
    At(usize),
}

impl TokenPos {
    fn resolve(self, len: usize) -> Result<usize> {
        match self {
            TokenPos::Last => Ok(len - 1),
            TokenPos::At(t) if t < len => Ok(t),
            TokenPos::At(t) => Err(Error::Intervention(format!(
                "position {t} not reached by a sequence of length {len}"
            ))),
        }
    }
}

/// What is being captured or patched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    /// Token plus position embedding, before any block.
    Embed,
    /// Residual stream after block `0..layers`.
    LayerOut(usize),
    /// The attention contribution added by block `0..layers`.
    MhsaOut(usize),
    /// The MLP contribution added by block `0..layers`.
    MlpOut(usize),
    /// One head's summand of the attention contribution.
    HeadOut { layer: usize, head: usize },
    /// Final-position vocabulary logits (capture only).
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HookSite {
    pub site: Site,
    pub position: TokenPos,
}

impl HookSite {
    pub fn last(site: Site) -> HookSite {
        HookSite { site, position: TokenPos::Last }
    }

    pub fn at(site: Site, position: usize) -> HookSite {
        HookSite { site, position: TokenPos::At(position) }
    }

    fn label(&self) -> String {
        format!("{:?}", self)
    }
}

#[derive(Debug, Clone)]
pub struct Patch<F> {
    pub site: HookSite,
    pub value: Vec<F>,
}

/// Result of a forward run: the requested captures (each exactly once) and
/// the final-position logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCapture<F> {
    pub captures: BTreeMap<HookSite, Vec<F>>,
    pub logits: Vec<F>,
}

impl<F: Scalar> TraceCapture<F> {
    pub fn get(&self, site: &HookSite) -> Option<&[F]> {
        self.captures.get(site).map(|v| v.as_slice())
    }
}

/// Internal key with the position resolved against the sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Slot {
    Embed(usize),
    LayerOut(usize, usize),
    MhsaOut(usize, usize),
    MlpOut(usize, usize),
    HeadOut(usize, usize, usize),
    Final(usize),
}

fn resolve(site: &HookSite, config: &ModelConfig, len: usize, patching: bool) -> Result<Slot> {
    let t = site.position.resolve(len)?;
    let check_layer = |l: usize| -> Result<()> {
        if l < config.layers {
            Ok(())
        } else {
            Err(Error::Intervention(format!(
                "layer {l} out of range for a {}-layer model",
                config.layers
            )))
        }
    };
    match site.site {
        Site::Embed => Ok(Slot::Embed(t)),
        Site::LayerOut(l) => {
            check_layer(l)?;
            Ok(Slot::LayerOut(l, t))
        }
        Site::MhsaOut(l) => {
            check_layer(l)?;
            Ok(Slot::MhsaOut(l, t))
        }
        Site::MlpOut(l) => {
            check_layer(l)?;
            Ok(Slot::MlpOut(l, t))
        }
        Site::HeadOut { layer, head } => {
            check_layer(layer)?;
            if head >= config.heads {
                return Err(Error::Intervention(format!(
                    "head {head} out of range for {} heads",
                    config.heads
                )));
            }
            Ok(Slot::HeadOut(layer, head, t))
        }
        Site::Final if patching => {
            Err(Error::Intervention("final logits cannot be patched".into()))
        }
        Site::Final => Ok(Slot::Final(t)),
    }
}

struct Hooks<'a, F> {
    captures: Vec<(Slot, HookSite)>,
    patches: BTreeMap<Slot, &'a [F]>,
    out: BTreeMap<HookSite, Vec<F>>,
}

impl<'a, F: Scalar> Hooks<'a, F> {
    /// Replaces `row` if a patch targets this slot, then records a capture if
    /// one was requested. Captures observe the value that flows downstream.
    fn apply(&mut self, slot: Slot, row: &mut [F]) {
        if let Some(value) = self.patches.get(&slot) {
            row.copy_from_slice(value);
        }
        self.capture_only(slot, row);
    }

    fn capture_only(&mut self, slot: Slot, row: &[F]) {
        for (s, site) in &self.captures {
            if *s == slot {
                self.out.insert(*site, row.to_vec());
            }
        }
    }

    fn wants_final(&self, t: usize) -> bool {
        self.captures.iter().any(|(s, _)| *s == Slot::Final(t))
    }
}

/// Runs the model over `token_ids`, applying `patches` and recording
/// `capture` sites. Always returns the final-position logits.
pub fn forward<F: Scalar>(
    weights: &Weights<F>,
    token_ids: &[TokenId],
    capture: &[HookSite],
    patches: &[Patch<F>],
) -> Result<TraceCapture<F>> {
    let config = &weights.config;
    config.validate()?;
    let len = token_ids.len();
    if len == 0 {
        return Err(Error::Config("empty token sequence".into()));
    }
    if len > config.max_seq {
        return Err(Error::Config(format!(
            "sequence length {len} exceeds max_seq {}",
            config.max_seq
        )));
    }
    for &id in token_ids {
        if id as usize >= config.vocab_size {
            return Err(Error::Config(format!(
                "token id {id} out of range for vocab_size {}",
                config.vocab_size
            )));
        }
    }

    let d = config.d_model;
    let mut hooks = Hooks {
        captures: capture
            .iter()
            .map(|site| Ok((resolve(site, config, len, false)?, *site)))
            .collect::<Result<Vec<_>>>()?,
        patches: BTreeMap::new(),
        out: BTreeMap::new(),
    };
    for patch in patches {
        let slot = resolve(&patch.site, config, len, true)?;
        if patch.value.len() != d {
            return Err(Error::Intervention(format!(
                "patch at {} has width {}, expected {d}",
                patch.site.label(),
                patch.value.len()
            )));
        }
        if !patch.value.iter().all(|x| x.is_finite()) {
            return Err(Error::Intervention(format!(
                "patch at {} contains non-finite values",
                patch.site.label()
            )));
        }
        if hooks.patches.insert(slot, &patch.value).is_some() {
            return Err(Error::Intervention(format!(
                "duplicate patch at {}",
                patch.site.label()
            )));
        }
    }

    // embedding stream
    let mut x = vec![F::zero(); len * d];
    for (t, &id) in token_ids.iter().enumerate() {
        let tok = weights.token_embed.row(id as usize);
        let pos = weights.pos_embed.row(t);
        let row = &mut x[t * d..(t + 1) * d];
        for ((o, &a), &b) in row.iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    for t in 0..len {
        hooks.apply(Slot::Embed(t), &mut x[t * d..(t + 1) * d]);
    }

    let mut state = BlockState::new(len, config);
    for (l, block) in weights.blocks.iter().enumerate() {
        run_block(&mut x, block, config, l, &mut state, &mut hooks)?;
    }

    // final layer norm and logits; the same transposed-unembed matmul the
    // training forward uses, so both paths produce identical logits
    let mut logits = Vec::new();
    let mut nf = vec![F::zero(); d];
    let mut unembed_t = vec![F::zero(); d * config.vocab_size];
    kernels::transpose(&mut unembed_t, weights.unembed.data(), config.vocab_size, d);
    let eps = F::from_f64_(LN_EPS);
    for t in 0..len {
        let need_final = hooks.wants_final(t);
        if t == len - 1 || need_final {
            nf.copy_from_slice(&x[t * d..(t + 1) * d]);
            kernels::layer_norm(&mut nf, weights.final_ln_gain.data(), weights.final_ln_bias.data(), eps);
            let mut row_logits = vec![F::zero(); config.vocab_size];
            kernels::matmul(&mut row_logits, &nf, &unembed_t, 1, d, config.vocab_size);
            if need_final {
                hooks.capture_only(Slot::Final(t), &row_logits);
            }
            if t == len - 1 {
                logits = row_logits;
            }
        }
    }
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("forward: non-finite logits".into()));
    }
    Ok(TraceCapture { captures: hooks.out, logits })
}

/// Scratch buffers reused across blocks.
struct BlockState<F> {
    ln: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    attn: Vec<F>,
    /// One head's queries/values packed contiguously, `[len, head_dim]`,
    /// and its keys packed transposed, `[head_dim, len]`.
    qh: Vec<F>,
    kht: Vec<F>,
    vh: Vec<F>,
    /// Raw attention scores for one head, `[len, len]`.
    scores: Vec<F>,
    /// Softmaxed attention for one head, `[len, len]`; row `t` is zero past
    /// column `t`, so full-width matmuls skip the masked region exactly.
    probs: Vec<F>,
    head_out: Vec<F>,
    contrib: Vec<F>,
    mlp_pre: Vec<F>,
    mlp_out: Vec<F>,
}

impl<F: Scalar> BlockState<F> {
    fn new(len: usize, config: &ModelConfig) -> Self {
        let d = config.d_model;
        let dh = config.head_dim();
        BlockState {
            ln: vec![F::zero(); len * d],
            q: vec![F::zero(); len * d],
            k: vec![F::zero(); len * d],
            v: vec![F::zero(); len * d],
            attn: vec![F::zero(); len * d],
            qh: vec![F::zero(); len * dh],
            kht: vec![F::zero(); len * dh],
            vh: vec![F::zero(); len * dh],
            scores: vec![F::zero(); len * len],
            probs: vec![F::zero(); len * len],
            head_out: vec![F::zero(); len * dh],
            contrib: vec![F::zero(); len * d],
            mlp_pre: vec![F::zero(); len * config.d_ff],
            mlp_out: vec![F::zero(); len * d],
        }
    }
}


fn run_block<F: Scalar>(
    x: &mut [F],
    block: &crate::model::BlockWeights<F>,
    config: &ModelConfig,
    l: usize,
    s: &mut BlockState<F>,
    hooks: &mut Hooks<F>,
) -> Result<()> {
    let d = config.d_model;
    let len = x.len() / d;
    let eps = F::from_f64_(LN_EPS);

    // LN1 then fused QKV projections
    s.ln.copy_from_slice(x);
    for t in 0..len {
        kernels::layer_norm(&mut s.ln[t * d..(t + 1) * d], block.ln1_gain.data(), block.ln1_bias.data(), eps);
    }
    kernels::matmul(&mut s.q, &s.ln, block.wq.data(), len, d, d);
    kernels::matmul(&mut s.k, &s.ln, block.wk.data(), len, d, d);
    kernels::matmul(&mut s.v, &s.ln, block.wv.data(), len, d, d);

    // attention, head by head, accumulated in head order
    for v in s.attn.iter_mut() {
        *v = F::zero();
    }
    let dh = config.head_dim();
    let scale = F::from_f64_(1.0 / (dh as f64).sqrt());
    for h in 0..config.heads {
        let off = h * dh;
        kernels::pack_head(&mut s.qh, &s.q, len, d, off, dh);
        kernels::pack_head_t(&mut s.kht, &s.k, len, d, off, dh);
        kernels::pack_head(&mut s.vh, &s.v, len, d, off, dh);
        // Scores over the full square (the masked half is discarded), then
        // scale + softmax per causal prefix. Rows of `probs` keep exact
        // zeros past the prefix, so the full-width mix matmul below adds
        // nothing for masked positions.
        kernels::matmul(&mut s.scores, &s.qh, &s.kht, len, dh, len);
        for t in 0..len {
            let prow = &mut s.probs[t * len..t * len + t + 1];
            for (p, &sc) in prow.iter_mut().zip(&s.scores[t * len..]) {
                *p = sc * scale;
            }
            kernels::softmax(prow);
        }
        kernels::matmul(&mut s.head_out, &s.probs, &s.vh, len, len, dh);
        // contribution of this head: head_out @ rows[off..off+dh] of W_O
        let wo_rows = &block.wo.data()[off * d..(off + dh) * d];
        kernels::matmul(&mut s.contrib, &s.head_out, wo_rows, len, dh, d);
        for t in 0..len {
            let crow = &mut s.contrib[t * d..(t + 1) * d];
            hooks.apply(Slot::HeadOut(l, h, t), crow);
            for (a, &cv) in s.attn[t * d..(t + 1) * d].iter_mut().zip(crow.iter()) {
                *a += cv;
            }
        }
    }
    for t in 0..len {
        hooks.apply(Slot::MhsaOut(l, t), &mut s.attn[t * d..(t + 1) * d]);
    }

    // first residual add
    for (o, &a) in x.iter_mut().zip(s.attn.iter()) {
        *o += a;
    }

    // MLP on LN2 of the mid stream
    s.ln.copy_from_slice(x);
    for t in 0..len {
        kernels::layer_norm(&mut s.ln[t * d..(t + 1) * d], block.ln2_gain.data(), block.ln2_bias.data(), eps);
    }
    kernels::matmul(&mut s.mlp_pre, &s.ln, block.w_in.data(), len, d, config.d_ff);
    for v in s.mlp_pre.iter_mut() {
        *v = kernels::gelu_scalar(*v);
    }
    kernels::matmul(&mut s.mlp_out, &s.mlp_pre, block.w_out.data(), len, config.d_ff, d);
    for t in 0..len {
        hooks.apply(Slot::MlpOut(l, t), &mut s.mlp_out[t * d..(t + 1) * d]);
    }

    // second residual add, then the block output hook
    for (o, &a) in x.iter_mut().zip(s.mlp_out.iter()) {
        *o += a;
    }
    for t in 0..len {
        hooks.apply(Slot::LayerOut(l, t), &mut x[t * d..(t + 1) * d]);
    }
    Ok(())
}

/// Per-head contributions to one block's attention output at `position`,
/// computed from the LN1 output `ln1` (`[len, d_model]` rows, full context).
/// Their sum equals the MHSA contribution at that position.
pub fn decompose_heads<F: Scalar>(
    weights: &Weights<F>,
    layer: usize,
    ln1: &crate::tensor::TensorBase<F>,
    position: usize,
) -> Result<Vec<Vec<F>>> {
    let config = &weights.config;
    if layer >= config.layers {
        return Err(Error::Config(format!(
            "layer {layer} out of range for a {}-layer model",
            config.layers
        )));
    }
    if ln1.shape().len() != 2 || ln1.shape()[1] != config.d_model {
        return Err(Error::Shape(format!(
            "ln1 output must be [len, {}], got {:?}",
            config.d_model,
            ln1.shape()
        )));
    }
    let len = ln1.shape()[0];
    if position >= len {
        return Err(Error::Config(format!("position {position} out of range for length {len}")));
    }

    let d = config.d_model;
    let dh = config.head_dim();
    let block = &weights.blocks[layer];
    let mut q = vec![F::zero(); len * d];
    let mut k = vec![F::zero(); len * d];
    let mut v = vec![F::zero(); len * d];
    kernels::matmul(&mut q, ln1.data(), block.wq.data(), len, d, d);
    kernels::matmul(&mut k, ln1.data(), block.wk.data(), len, d, d);
    kernels::matmul(&mut v, ln1.data(), block.wv.data(), len, d, d);

    let scale = F::from_f64_(1.0 / (dh as f64).sqrt());
    let mut out = Vec::with_capacity(config.heads);
    let t = position;
    for h in 0..config.heads {
        let off = h * dh;
        let qrow = &q[t * d + off..t * d + off + dh];
        let mut probs: Vec<F> = (0..=t)
            .map(|u| kernels::dot(qrow, &k[u * d + off..u * d + off + dh]) * scale)
            .collect();
        kernels::softmax(&mut probs);
        let mut orow = vec![F::zero(); dh];
        for (u, &p) in probs.iter().enumerate() {
            kernels::axpy(&mut orow, p, &v[u * d + off..u * d + off + dh]);
        }
        let mut contrib = vec![F::zero(); d];
        for (c, &ov) in orow.iter().enumerate() {
            kernels::axpy(&mut contrib, ov, block.wo.row(off + c));
        }
        out.push(contrib);
    }
    Ok(out)
}
