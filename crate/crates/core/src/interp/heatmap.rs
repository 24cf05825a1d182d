//! Per-head score heatmaps: what each attention head writes about the
//! answer symbols, read through the raw (additive) projection.

use crate::error::{Error, Result};
use crate::eval::{restricted_argmax, PromptInputs};
use crate::interp::lens::{vocab_project, ProjectionMode};
use crate::model::{forward, HookSite, Site, Weights};
use crate::scalar::Scalar;

/// Averages for one (layer, head) over the correctly-predicted cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapCell {
    pub layer: usize,
    pub head: usize,
    /// Mean of the sum of the four answer-symbol logits.
    pub sum_logit: f64,
    /// Mean of gold-symbol logit minus the best of the other three.
    pub diff_logit: f64,
    pub sum_probit: f64,
    pub diff_probit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadHeatmap {
    /// Cells ordered by (layer, head).
    pub cells: Vec<HeatmapCell>,
    pub layers: std::ops::Range<usize>,
    pub heads: usize,
    /// Correctly-predicted prompts, the averaging cohort.
    pub n_correct: usize,
    pub n_total: usize,
}

/// Projects every head's contribution at the final position and averages the
/// answer-symbol score summaries over prompts the model answers correctly.
pub fn head_heatmap<F: Scalar>(
    weights: &Weights<F>,
    prompts: &[PromptInputs],
    layers: std::ops::Range<usize>,
) -> Result<HeadHeatmap> {
    let config = &weights.config;
    if layers.start >= layers.end || layers.end > config.layers {
        return Err(Error::Config(format!(
            "layer range {layers:?} invalid for a {}-layer model",
            config.layers
        )));
    }
    let first = prompts
        .first()
        .ok_or_else(|| Error::EmptyCohort("head heatmap needs at least one prompt".into()))?;
    for p in prompts {
        if p.symbols != first.symbols {
            return Err(Error::Protocol(format!(
                "heatmap prompts must share one symbol set, got {:?} and {:?}",
                first.symbols, p.symbols
            )));
        }
    }

    let mut sites = Vec::new();
    for layer in layers.clone() {
        for head in 0..config.heads {
            sites.push(HookSite::last(Site::HeadOut { layer, head }));
        }
    }
    let mut sums = vec![[0.0f64; 4]; sites.len()];
    let mut n_correct = 0usize;
    for prompt in prompts {
        let trace = forward(weights, &prompt.ids, &sites, &[])?;
        let scores: [f64; 4] =
            prompt.answer_ids.map(|id| trace.logits[id as usize].to_f64_());
        let (predicted, _) = restricted_argmax(&scores);
        if predicted != prompt.gold_position {
            continue;
        }
        n_correct += 1;
        for (site, acc) in sites.iter().zip(sums.iter_mut()) {
            let state = trace.get(site).expect("requested capture");
            let (logits, probits) = vocab_project(weights, state, ProjectionMode::Raw)?;
            let mut answer_logits = [0.0f64; 4];
            let mut answer_probits = [0.0f64; 4];
            for (i, &id) in prompt.answer_ids.iter().enumerate() {
                answer_logits[i] = logits[id as usize].to_f64_();
                answer_probits[i] = probits[id as usize].to_f64_();
            }
            let gold = prompt.gold_position;
            let best_other = |vals: &[f64; 4]| {
                (0..4)
                    .filter(|&i| i != gold)
                    .map(|i| vals[i])
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            acc[0] += answer_logits.iter().sum::<f64>();
            acc[1] += answer_logits[gold] - best_other(&answer_logits);
            acc[2] += answer_probits.iter().sum::<f64>();
            acc[3] += answer_probits[gold] - best_other(&answer_probits);
        }
    }
    if n_correct == 0 {
        return Err(Error::EmptyCohort(format!(
            "no correctly-predicted prompts among {}; the heatmap cohort is empty",
            prompts.len()
        )));
    }
    let cells = sites
        .iter()
        .zip(&sums)
        .map(|(site, acc)| {
            let (layer, head) = match site.site {
                Site::HeadOut { layer, head } => (layer, head),
                _ => unreachable!("heatmap sites are head outputs"),
            };
            let n = n_correct as f64;
            HeatmapCell {
                layer,
                head,
                sum_logit: acc[0] / n,
                diff_logit: acc[1] / n,
                sum_probit: acc[2] / n,
                diff_probit: acc[3] / n,
            }
        })
        .collect();
    Ok(HeadHeatmap { cells, layers, heads: config.heads, n_correct, n_total: prompts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights, ModelConfig};

    fn rigged_prompt(weights: &Weights<f32>, ids: Vec<u32>) -> PromptInputs {
        // set the gold to whatever the model predicts so the prompt counts
        let mut p = PromptInputs {
            ids,
            answer_ids: [4, 11, 23, 35],
            symbols: ['A', 'B', 'C', 'D'],
            gold_position: 0,
        };
        let trace = forward(weights, &p.ids, &[], &[]).unwrap();
        let scores: [f64; 4] = p.answer_ids.map(|id| trace.logits[id as usize] as f64);
        p.gold_position = restricted_argmax(&scores).0;
        p
    }

    #[test]
    fn cells_cover_the_layer_head_grid_in_order() {
        let config = ModelConfig::new(3, 4, 16, 40, 32);
        let weights = init_weights(&config, 41).unwrap();
        let prompts = vec![rigged_prompt(&weights, vec![0, 5, 9, 2])];
        let hm = head_heatmap(&weights, &prompts, 1..3).unwrap();
        assert_eq!(hm.cells.len(), 2 * 4);
        assert_eq!(hm.n_correct, 1);
        let coords: Vec<(usize, usize)> =
            hm.cells.iter().map(|c| (c.layer, c.head)).collect();
        assert_eq!(
            coords,
            vec![(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1), (2, 2), (2, 3)]
        );
    }

    #[test]
    fn a_zeroed_head_contributes_zero_sum_and_zero_diff() {
        let config = ModelConfig::new(2, 2, 16, 40, 32);
        let mut weights: Weights<f32> = init_weights(&config, 42).unwrap();
        // head 1 of layer 0 writes through rows 8..16 of its block's wo
        let dh = config.head_dim();
        for r in dh..2 * dh {
            for v in weights.blocks[0].wo.data_mut()[r * 16..(r + 1) * 16].iter_mut() {
                *v = 0.0;
            }
        }
        let prompts = vec![rigged_prompt(&weights, vec![0, 5, 9, 2])];
        let hm = head_heatmap(&weights, &prompts, 0..2).unwrap();
        let cell = hm.cells.iter().find(|c| c.layer == 0 && c.head == 1).unwrap();
        assert_eq!(cell.sum_logit, 0.0);
        assert_eq!(cell.diff_logit, 0.0);
        // raw probits of the zero vector are uniform, so the sum is 4/V and
        // the gold minus max-other difference is exactly zero
        assert!((cell.sum_probit - 4.0 / 40.0).abs() < 1e-6);
        assert_eq!(cell.diff_probit, 0.0);
    }

    #[test]
    fn head_sums_reproduce_the_attention_projection() {
        let config = ModelConfig::new(3, 4, 24, 40, 32);
        let weights = init_weights(&config, 43).unwrap();
        let prompt = rigged_prompt(&weights, vec![0, 5, 9, 2, 17, 30]);
        let hm = head_heatmap(&weights, &[prompt.clone()], 0..3).unwrap();
        for layer in 0..3 {
            let site = HookSite::last(Site::MhsaOut(layer));
            let trace = forward(&weights, &prompt.ids, &[site], &[]).unwrap();
            let (logits, _) =
                vocab_project(&weights, trace.get(&site).unwrap(), ProjectionMode::Raw)
                    .unwrap();
            let whole: f64 =
                prompt.answer_ids.iter().map(|&id| logits[id as usize] as f64).sum();
            let parts: f64 = hm
                .cells
                .iter()
                .filter(|c| c.layer == layer)
                .map(|c| c.sum_logit)
                .sum();
            assert!((whole - parts).abs() <= 1e-4, "layer {layer}: {whole} vs {parts}");
        }
    }

    #[test]
    fn mixed_symbol_sets_are_rejected() {
        let config = ModelConfig::new(2, 2, 16, 40, 32);
        let weights = init_weights(&config, 44).unwrap();
        let a = rigged_prompt(&weights, vec![0, 5, 9, 2]);
        let mut b = a.clone();
        b.symbols = ['Q', 'Z', 'R', 'X'];
        let err = head_heatmap(&weights, &[a, b], 0..2).unwrap_err();
        assert!(err.to_string().contains("share one symbol set"), "{err}");
    }

    #[test]
    fn an_all_wrong_cohort_is_empty() {
        let config = ModelConfig::new(2, 2, 16, 40, 32);
        let weights = init_weights(&config, 45).unwrap();
        let mut p = rigged_prompt(&weights, vec![0, 5, 9, 2]);
        p.gold_position = (p.gold_position + 1) % 4;
        let err = head_heatmap(&weights, &[p], 0..2).unwrap_err();
        assert!(matches!(err, Error::EmptyCohort(_)), "{err}");
    }
}
