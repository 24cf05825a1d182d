//! Activation patching: capture a hidden state in one prompt's run and
//! substitute it into another's, then read how the answer scores move.
//!
//! A pair qualifies when the model answers both prompts correctly on its
//! own and the two gold answer tokens differ; only then does a moved state
//! demonstrate transported answer information rather than noise.

use crate::error::{Error, Result};
use crate::eval::{restricted_argmax, PromptInputs};
use crate::model::{forward, HookSite, Patch, Site, Weights};
use crate::scalar::Scalar;
use crate::tensor::kernels;

/// Whether the qualifying conditions are enforced. Bypassing them is for
/// identity tests (self-patching a prompt into itself) where the conditions
/// are unsatisfiable by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchGuard {
    Enforce,
    BypassForTesting,
}

/// Scores of the target prompt's four answers after one intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchOutcome {
    pub site: HookSite,
    /// Final-position logits of the target's answer tokens, displayed order.
    pub answer_logits: [f64; 4],
    /// Probits from the softmax over the full vocabulary.
    pub answer_probits: [f64; 4],
    pub predicted_position: usize,
    pub predicted_symbol: char,
    pub tie: bool,
}

fn outcome_from_logits<F: Scalar>(
    site: HookSite,
    target: &PromptInputs,
    logits: &[F],
) -> Result<PatchOutcome> {
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits after patch at {site:?}")));
    }
    let mut probits: Vec<F> = logits.to_vec();
    kernels::softmax(&mut probits);
    let mut answer_logits = [0.0f64; 4];
    let mut answer_probits = [0.0f64; 4];
    for (i, &id) in target.answer_ids.iter().enumerate() {
        answer_logits[i] = logits[id as usize].to_f64_();
        answer_probits[i] = probits[id as usize].to_f64_();
    }
    let (predicted_position, tie) = restricted_argmax(&answer_logits);
    Ok(PatchOutcome {
        site,
        answer_logits,
        answer_probits,
        predicted_position,
        predicted_symbol: target.symbols[predicted_position],
        tie,
    })
}

fn check_correct<F: Scalar>(
    name: &str,
    prompt: &PromptInputs,
    logits: &[F],
) -> Result<()> {
    let scores: Vec<f64> =
        prompt.answer_ids.iter().map(|&id| logits[id as usize].to_f64_()).collect();
    let (predicted, _) = restricted_argmax(&[scores[0], scores[1], scores[2], scores[3]]);
    if predicted != prompt.gold_position {
        return Err(Error::Protocol(format!(
            "{name} prompt fails the qualifying conditions: predicted position {predicted}, gold {}",
            prompt.gold_position
        )));
    }
    Ok(())
}

/// Runs the source once, then patches each site into the target in turn.
/// Outcomes come back in the order of `sites`.
pub fn patch_pair<F: Scalar>(
    weights: &Weights<F>,
    source: &PromptInputs,
    target: &PromptInputs,
    sites: &[HookSite],
    guard: PatchGuard,
) -> Result<Vec<PatchOutcome>> {
    for site in sites {
        if site.site == Site::Final {
            return Err(Error::Intervention("final logits cannot be patched".into()));
        }
    }
    let source_trace = forward(weights, &source.ids, sites, &[])?;
    if guard == PatchGuard::Enforce {
        check_correct("source", source, &source_trace.logits)?;
        let target_trace = forward(weights, &target.ids, &[], &[])?;
        check_correct("target", target, &target_trace.logits)?;
        if source.gold_token_id() == target.gold_token_id() {
            return Err(Error::Protocol(format!(
                "source and target share the gold answer token (id {}); the pair carries no signal",
                source.gold_token_id()
            )));
        }
    }
    let mut outcomes = Vec::with_capacity(sites.len());
    for site in sites {
        let value = source_trace
            .get(site)
            .ok_or_else(|| Error::Config(format!("no capture recorded for {site:?}")))?
            .to_vec();
        let patched = forward(weights, &target.ids, &[], &[Patch { site: *site, value }])?;
        outcomes.push(outcome_from_logits(*site, target, &patched.logits)?);
    }
    Ok(outcomes)
}

pub fn activation_patch<F: Scalar>(
    weights: &Weights<F>,
    source: &PromptInputs,
    target: &PromptInputs,
    site: HookSite,
    guard: PatchGuard,
) -> Result<PatchOutcome> {
    let mut outcomes = patch_pair(weights, source, target, &[site], guard)?;
    Ok(outcomes.pop().expect("one site, one outcome"))
}

/// Which intermediate family a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteFamily {
    LayerOut,
    MhsaOut,
    MlpOut,
    HeadOut,
}

impl SiteFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SiteFamily::LayerOut => "layer_out",
            SiteFamily::MhsaOut => "mhsa_out",
            SiteFamily::MlpOut => "mlp_out",
            SiteFamily::HeadOut => "head_out",
        }
    }

    pub fn parse(s: &str) -> Result<SiteFamily> {
        match s {
            "layer_out" => Ok(SiteFamily::LayerOut),
            "mhsa_out" => Ok(SiteFamily::MhsaOut),
            "mlp_out" => Ok(SiteFamily::MlpOut),
            "head_out" => Ok(SiteFamily::HeadOut),
            other => Err(Error::Config(format!(
                "unknown site family '{other}', want layer_out|mhsa_out|mlp_out|head_out"
            ))),
        }
    }

    /// All sites of this family at the final position, ordered by
    /// (layer, head).
    pub fn sites(&self, layers: std::ops::Range<usize>, heads: usize) -> Vec<HookSite> {
        let mut out = Vec::new();
        for layer in layers {
            match self {
                SiteFamily::LayerOut => out.push(HookSite::last(Site::LayerOut(layer))),
                SiteFamily::MhsaOut => out.push(HookSite::last(Site::MhsaOut(layer))),
                SiteFamily::MlpOut => out.push(HookSite::last(Site::MlpOut(layer))),
                SiteFamily::HeadOut => {
                    for head in 0..heads {
                        out.push(HookSite::last(Site::HeadOut { layer, head }));
                    }
                }
            }
        }
        out
    }
}

fn site_coords(site: &HookSite) -> (usize, Option<usize>) {
    match site.site {
        Site::LayerOut(l) | Site::MhsaOut(l) | Site::MlpOut(l) => (l, None),
        Site::HeadOut { layer, head } => (layer, Some(head)),
        Site::Embed | Site::Final => (0, None),
    }
}

/// One qualifying pair's outcome at one swept site.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRow {
    /// Index of the pair in the sweep's input order.
    pub pair: usize,
    pub layer: usize,
    pub head: Option<usize>,
    pub outcome: PatchOutcome,
}

/// Mean answer scores at one swept site across qualifying pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub layer: usize,
    pub head: Option<usize>,
    pub mean_answer_logits: [f64; 4],
    pub mean_answer_probits: [f64; 4],
    /// Fraction of qualifying pairs whose post-patch prediction is the
    /// source prompt's gold symbol.
    pub source_transfer_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSweep {
    pub family: SiteFamily,
    pub rows: Vec<PatchRow>,
    pub cells: Vec<SweepCell>,
    pub qualifying: usize,
    /// Pairs that failed the qualifying conditions and were set aside.
    pub skipped: usize,
}

/// Sweeps one site family over `layers` for every qualifying pair and
/// averages the outcomes per site.
pub fn patch_sweep<F: Scalar>(
    weights: &Weights<F>,
    pairs: &[(PromptInputs, PromptInputs)],
    family: SiteFamily,
    layers: std::ops::Range<usize>,
) -> Result<PatchSweep> {
    let config = &weights.config;
    if layers.start >= layers.end || layers.end > config.layers {
        return Err(Error::Config(format!(
            "layer range {layers:?} invalid for a {}-layer model",
            config.layers
        )));
    }
    let sites = family.sites(layers, config.heads);
    let mut rows = Vec::new();
    let mut qualifying = 0usize;
    let mut skipped = 0usize;
    for (p, (source, target)) in pairs.iter().enumerate() {
        match patch_pair(weights, source, target, &sites, PatchGuard::Enforce) {
            Ok(outcomes) => {
                qualifying += 1;
                for outcome in outcomes {
                    let (layer, head) = site_coords(&outcome.site);
                    rows.push(PatchRow { pair: p, layer, head, outcome });
                }
            }
            Err(Error::Protocol(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if qualifying == 0 {
        return Err(Error::EmptyCohort(format!(
            "no qualifying pairs: all {skipped} failed the patching conditions"
        )));
    }
    let mut cells = Vec::with_capacity(sites.len());
    for site in &sites {
        let (layer, head) = site_coords(site);
        let mut mean_answer_logits = [0.0f64; 4];
        let mut mean_answer_probits = [0.0f64; 4];
        let mut transfers = 0usize;
        let mut n = 0usize;
        for row in rows.iter().filter(|row| row.outcome.site == *site) {
            let (source, _) = &pairs[row.pair];
            for i in 0..4 {
                mean_answer_logits[i] += row.outcome.answer_logits[i];
                mean_answer_probits[i] += row.outcome.answer_probits[i];
            }
            transfers += (row.outcome.predicted_symbol == source.gold_symbol()) as usize;
            n += 1;
        }
        for v in mean_answer_logits.iter_mut().chain(mean_answer_probits.iter_mut()) {
            *v /= n as f64;
        }
        cells.push(SweepCell {
            layer,
            head,
            mean_answer_logits,
            mean_answer_probits,
            source_transfer_rate: transfers as f64 / n as f64,
        });
    }
    Ok(PatchSweep { family, rows, cells, qualifying, skipped })
}
