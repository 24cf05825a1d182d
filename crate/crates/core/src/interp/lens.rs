//! Vocabulary projection: reading token scores directly off hidden states.
//!
//! A residual-stream state can be pushed through the final layer norm and
//! the unembedding to ask "if the network stopped here, what would it say?".
//! Additive contributions (attention, MLP, single heads) are instead
//! projected raw, without the norm, so that the projection of a sum equals
//! the sum of the projections.

use crate::error::{Error, Result};
use crate::eval::restricted_argmax;
use crate::eval::PromptInputs;
use crate::model::{forward, HookSite, Site, Weights, LN_EPS};
use crate::scalar::Scalar;
use crate::tensor::kernels;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProjectionMode {
    /// Apply the model's final layer norm before unembedding. The right
    /// reading for residual-stream states.
    WithFinalLn,
    /// Unembed the state as-is. Preserves additivity, so component
    /// contributions decompose exactly.
    Raw,
}

impl ProjectionMode {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionMode::WithFinalLn => "ln",
            ProjectionMode::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<ProjectionMode> {
        match s {
            "ln" => Ok(ProjectionMode::WithFinalLn),
            "raw" => Ok(ProjectionMode::Raw),
            other => Err(Error::Config(format!("unknown projection mode '{other}', want ln|raw"))),
        }
    }
}

/// Full-vocabulary logits and probits for one hidden state.
pub fn vocab_project<F: Scalar>(
    weights: &Weights<F>,
    state: &[F],
    mode: ProjectionMode,
) -> Result<(Vec<F>, Vec<F>)> {
    let d = weights.config.d_model;
    if state.len() != d {
        return Err(Error::Shape(format!(
            "projection input has width {}, expected {d}",
            state.len()
        )));
    }
    let mut h = state.to_vec();
    if mode == ProjectionMode::WithFinalLn {
        kernels::layer_norm(
            &mut h,
            weights.final_ln_gain.data(),
            weights.final_ln_bias.data(),
            F::from_f64_(LN_EPS),
        );
    }
    // Same transposed-unembed matmul as the forward pass, so projecting the
    // final residual with the final layer norm reproduces the model logits
    // exactly.
    let vocab = weights.config.vocab_size;
    let mut unembed_t = vec![F::zero(); d * vocab];
    kernels::transpose(&mut unembed_t, weights.unembed.data(), vocab, d);
    let mut logits = vec![F::zero(); vocab];
    kernels::matmul(&mut logits, &h, &unembed_t, 1, d, vocab);
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("projection produced non-finite logits".into()));
    }
    let mut probits = logits.clone();
    kernels::softmax(&mut probits);
    Ok((logits, probits))
}

/// One projected site, summarized against a prompt's four answer symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRecord {
    pub site: HookSite,
    pub mode: ProjectionMode,
    pub symbols: [char; 4],
    /// Logits of the answer tokens in displayed order.
    pub answer_logits: [f64; 4],
    pub answer_probits: [f64; 4],
    /// Best logit over the vocabulary excluding the four answer tokens.
    pub max_other_logit: f64,
    pub max_other_probit: f64,
    /// Projected answer argmax logit minus the best of the other three.
    pub logit_difference: f64,
    /// Same margin in probit space; shares the argmax with the logits.
    pub probit_difference: f64,
    pub predicted_position: usize,
    pub tie: bool,
}

fn record_for<F: Scalar>(
    site: HookSite,
    mode: ProjectionMode,
    inputs: &PromptInputs,
    logits: &[F],
    probits: &[F],
) -> ProjectionRecord {
    let mut answer_logits = [0.0f64; 4];
    let mut answer_probits = [0.0f64; 4];
    for (i, &id) in inputs.answer_ids.iter().enumerate() {
        answer_logits[i] = logits[id as usize].to_f64_();
        answer_probits[i] = probits[id as usize].to_f64_();
    }
    let is_answer = |v: usize| inputs.answer_ids.contains(&(v as TokenId));
    let mut max_other_logit = f64::NEG_INFINITY;
    let mut max_other_probit = f64::NEG_INFINITY;
    for v in 0..logits.len() {
        if is_answer(v) {
            continue;
        }
        max_other_logit = max_other_logit.max(logits[v].to_f64_());
        max_other_probit = max_other_probit.max(probits[v].to_f64_());
    }
    let (predicted_position, tie) = restricted_argmax(&answer_logits);
    let margin = |vals: &[f64; 4]| {
        let mut other = f64::NEG_INFINITY;
        for (i, &v) in vals.iter().enumerate() {
            if i != predicted_position {
                other = other.max(v);
            }
        }
        vals[predicted_position] - other
    };
    ProjectionRecord {
        site,
        mode,
        symbols: inputs.symbols,
        answer_logits,
        answer_probits,
        max_other_logit,
        max_other_probit,
        logit_difference: margin(&answer_logits),
        probit_difference: margin(&answer_probits),
        predicted_position,
        tie,
    }
}

/// The default lens trajectory: every block's output at the final position.
pub fn default_lens_sites(layers: usize) -> Vec<HookSite> {
    (0..layers).map(|l| HookSite::last(Site::LayerOut(l))).collect()
}

/// Projects the hidden state at each requested site of one prompt run.
/// Records come back in the order of `sites`.
pub fn lens_sweep<F: Scalar>(
    weights: &Weights<F>,
    inputs: &PromptInputs,
    sites: &[HookSite],
    mode: ProjectionMode,
) -> Result<Vec<ProjectionRecord>> {
    for site in sites {
        if site.site == Site::Final {
            return Err(Error::Config(
                "the final logits are not a projectable hidden state; use the last layer output"
                    .into(),
            ));
        }
    }
    let trace = forward(weights, &inputs.ids, sites, &[])?;
    let mut records = Vec::with_capacity(sites.len());
    for site in sites {
        let state = trace
            .get(site)
            .ok_or_else(|| Error::Config(format!("no capture recorded for {site:?}")))?;
        let (logits, probits) = vocab_project(weights, state, mode)?;
        records.push(record_for(*site, mode, inputs, &logits, &probits));
    }
    Ok(records)
}

/// Mean and standard deviation of lens records across instances, per site.
#[derive(Debug, Clone, PartialEq)]
pub struct LensAggregate {
    pub site: HookSite,
    pub mode: ProjectionMode,
    pub symbols: [char; 4],
    pub n: usize,
    pub answer_logits_mean: [f64; 4],
    pub answer_logits_sd: [f64; 4],
    pub answer_probits_mean: [f64; 4],
    pub answer_probits_sd: [f64; 4],
    pub max_other_logit_mean: f64,
    pub max_other_logit_sd: f64,
    pub max_other_probit_mean: f64,
    pub max_other_probit_sd: f64,
    pub logit_difference_mean: f64,
    pub logit_difference_sd: f64,
    pub probit_difference_mean: f64,
    pub probit_difference_sd: f64,
}

struct MeanSd {
    sum: f64,
    sumsq: f64,
    n: usize,
}

impl MeanSd {
    fn new() -> Self {
        MeanSd { sum: 0.0, sumsq: 0.0, n: 0 }
    }

    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sumsq += x * x;
        self.n += 1;
    }

    /// Population statistics; a single sample has deviation zero.
    fn stats(&self) -> (f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sumsq / n - mean * mean).max(0.0);
        (mean, var.sqrt())
    }
}

/// Aggregates per-instance lens sweeps that used the same sites and mode.
pub fn aggregate_lens(per_instance: &[Vec<ProjectionRecord>]) -> Result<Vec<LensAggregate>> {
    let first = per_instance
        .first()
        .ok_or_else(|| Error::EmptyCohort("no lens records to aggregate".into()))?;
    for records in per_instance {
        if records.len() != first.len() {
            return Err(Error::Shape(format!(
                "lens sweeps disagree on site count: {} vs {}",
                records.len(),
                first.len()
            )));
        }
        for (r, f) in records.iter().zip(first) {
            if r.site != f.site || r.mode != f.mode || r.symbols != f.symbols {
                return Err(Error::Shape(
                    "lens sweeps disagree on sites, mode, or symbols".into(),
                ));
            }
        }
    }
    let mut out = Vec::with_capacity(first.len());
    for s in 0..first.len() {
        let mut logit_acc = [(); 4].map(|_| MeanSd::new());
        let mut probit_acc = [(); 4].map(|_| MeanSd::new());
        let mut mol = MeanSd::new();
        let mut mop = MeanSd::new();
        let mut ld = MeanSd::new();
        let mut pd = MeanSd::new();
        for records in per_instance {
            let r = &records[s];
            for i in 0..4 {
                logit_acc[i].push(r.answer_logits[i]);
                probit_acc[i].push(r.answer_probits[i]);
            }
            mol.push(r.max_other_logit);
            mop.push(r.max_other_probit);
            ld.push(r.logit_difference);
            pd.push(r.probit_difference);
        }
        let mut agg = LensAggregate {
            site: first[s].site,
            mode: first[s].mode,
            symbols: first[s].symbols,
            n: per_instance.len(),
            answer_logits_mean: [0.0; 4],
            answer_logits_sd: [0.0; 4],
            answer_probits_mean: [0.0; 4],
            answer_probits_sd: [0.0; 4],
            max_other_logit_mean: 0.0,
            max_other_logit_sd: 0.0,
            max_other_probit_mean: 0.0,
            max_other_probit_sd: 0.0,
            logit_difference_mean: 0.0,
            logit_difference_sd: 0.0,
            probit_difference_mean: 0.0,
            probit_difference_sd: 0.0,
        };
        for i in 0..4 {
            (agg.answer_logits_mean[i], agg.answer_logits_sd[i]) = logit_acc[i].stats();
            (agg.answer_probits_mean[i], agg.answer_probits_sd[i]) = probit_acc[i].stats();
        }
        (agg.max_other_logit_mean, agg.max_other_logit_sd) = mol.stats();
        (agg.max_other_probit_mean, agg.max_other_probit_sd) = mop.stats();
        (agg.logit_difference_mean, agg.logit_difference_sd) = ld.stats();
        (agg.probit_difference_mean, agg.probit_difference_sd) = pd.stats();
        out.push(agg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights, ModelConfig, TokenPos};

    fn setup() -> (Weights<f32>, PromptInputs) {
        let config = ModelConfig::new(3, 2, 16, 40, 32);
        let weights = init_weights(&config, 21).unwrap();
        let inputs = PromptInputs {
            ids: vec![0, 5, 9, 13, 2, 30, 7, 1],
            answer_ids: [4, 11, 23, 35],
            symbols: ['A', 'B', 'C', 'D'],
            gold_position: 1,
        };
        (weights, inputs)
    }

    #[test]
    fn final_residual_with_norm_reproduces_the_model_logits() {
        let (weights, inputs) = setup();
        let site = HookSite::last(Site::LayerOut(2));
        let trace = forward(&weights, &inputs.ids, &[site], &[]).unwrap();
        let (logits, _) =
            vocab_project(&weights, trace.get(&site).unwrap(), ProjectionMode::WithFinalLn)
                .unwrap();
        for (a, b) in logits.iter().zip(&trace.logits) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn raw_projection_is_additive_over_the_block_decomposition() {
        let (weights, inputs) = setup();
        let layer = 1;
        let sites = [
            HookSite::last(Site::LayerOut(layer - 1)),
            HookSite::last(Site::MhsaOut(layer)),
            HookSite::last(Site::MlpOut(layer)),
            HookSite::last(Site::LayerOut(layer)),
        ];
        let trace = forward(&weights, &inputs.ids, &sites, &[]).unwrap();
        let project = |site: &HookSite| {
            vocab_project(&weights, trace.get(site).unwrap(), ProjectionMode::Raw).unwrap().0
        };
        let prev = project(&sites[0]);
        let attn = project(&sites[1]);
        let mlp = project(&sites[2]);
        let out = project(&sites[3]);
        for v in 0..out.len() {
            let sum = prev[v] + attn[v] + mlp[v];
            assert!((sum - out[v]).abs() <= 1e-4, "vocab {v}: {sum} vs {}", out[v]);
        }
    }

    #[test]
    fn per_head_raw_projections_sum_to_the_attention_projection() {
        let (weights, inputs) = setup();
        let layer = 2;
        let mut sites = vec![HookSite::last(Site::MhsaOut(layer))];
        for head in 0..weights.config.heads {
            sites.push(HookSite::last(Site::HeadOut { layer, head }));
        }
        let trace = forward(&weights, &inputs.ids, &sites, &[]).unwrap();
        let whole =
            vocab_project(&weights, trace.get(&sites[0]).unwrap(), ProjectionMode::Raw)
                .unwrap()
                .0;
        let mut summed = vec![0.0f32; whole.len()];
        for site in &sites[1..] {
            let head =
                vocab_project(&weights, trace.get(site).unwrap(), ProjectionMode::Raw).unwrap().0;
            for (s, h) in summed.iter_mut().zip(&head) {
                *s += h;
            }
        }
        for (s, w) in summed.iter().zip(&whole) {
            assert!((s - w).abs() <= 1e-4, "{s} vs {w}");
        }
    }

    #[test]
    fn probits_are_a_distribution_and_answer_probits_stay_bounded() {
        let (weights, inputs) = setup();
        let records = lens_sweep(
            &weights,
            &inputs,
            &default_lens_sites(weights.config.layers),
            ProjectionMode::WithFinalLn,
        )
        .unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            let sum: f64 = r.answer_probits.iter().sum();
            assert!(sum <= 1.0 + 1e-9, "answer probits sum {sum}");
            for &p in &r.answer_probits {
                assert!((0.0..=1.0).contains(&p));
            }
            assert!((0.0..=1.0).contains(&r.max_other_probit));
            assert!(r.logit_difference.is_finite());
        }
    }

    #[test]
    fn logit_difference_matches_its_definition() {
        let (weights, inputs) = setup();
        let records = lens_sweep(
            &weights,
            &inputs,
            &default_lens_sites(3),
            ProjectionMode::WithFinalLn,
        )
        .unwrap();
        for r in &records {
            let p = r.predicted_position;
            let best_other = (0..4)
                .filter(|&i| i != p)
                .map(|i| r.answer_logits[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(r.answer_logits[p] >= best_other);
            assert!((r.logit_difference - (r.answer_logits[p] - best_other)).abs() < 1e-12);
        }
    }

    #[test]
    fn known_margins_come_out_exactly() {
        // answer logits {A:5, B:2, C:1, D:0} must yield difference 3, prediction A
        let config = ModelConfig::new(1, 1, 4, 8, 8);
        let mut weights: Weights<f32> = Weights::zeros(&config).unwrap();
        // zero gain wipes the state; bias writes a chosen vector into LN output
        for (i, b) in weights.final_ln_bias.data_mut().iter_mut().enumerate() {
            *b = [1.0, 0.0, 0.0, 0.0][i];
        }
        // unembedding row v reads logit = its first column entry
        for v in 0..8 {
            weights.unembed.data_mut()[v * 4] = [0.0, 5.0, 2.0, 1.0, 0.0, -3.0, -3.0, -3.0][v];
        }
        let inputs = PromptInputs {
            ids: vec![0],
            answer_ids: [1, 2, 3, 4],
            symbols: ['A', 'B', 'C', 'D'],
            gold_position: 0,
        };
        let site = HookSite::last(Site::LayerOut(0));
        let records =
            lens_sweep(&weights, &inputs, &[site], ProjectionMode::WithFinalLn).unwrap();
        let r = &records[0];
        assert_eq!(r.answer_logits, [5.0, 2.0, 1.0, 0.0]);
        assert_eq!(r.predicted_position, 0);
        assert_eq!(r.logit_difference, 3.0);
        assert_eq!(r.max_other_logit, 0.0); // ids 0, 5, 6, 7 peak at 0
    }

    #[test]
    fn projecting_the_wrong_width_or_final_site_fails() {
        let (weights, inputs) = setup();
        assert!(vocab_project(&weights, &[0.0f32; 3], ProjectionMode::Raw).is_err());
        let err = lens_sweep(
            &weights,
            &inputs,
            &[HookSite::last(Site::Final)],
            ProjectionMode::Raw,
        )
        .unwrap_err();
        assert!(err.to_string().contains("not a projectable"), "{err}");
    }

    #[test]
    fn aggregation_means_and_deviations_are_right() {
        let (weights, _) = setup();
        let mk = |seed: u64| PromptInputs {
            ids: vec![0, (seed % 30) as u32 + 2, 9, 1],
            answer_ids: [4, 11, 23, 35],
            symbols: ['A', 'B', 'C', 'D'],
            gold_position: 0,
        };
        let sites = default_lens_sites(3);
        let sweeps: Vec<_> = (0..4)
            .map(|s| lens_sweep(&weights, &mk(s), &sites, ProjectionMode::WithFinalLn).unwrap())
            .collect();
        let agg = aggregate_lens(&sweeps).unwrap();
        assert_eq!(agg.len(), 3);
        for (s, a) in agg.iter().enumerate() {
            let vals: Vec<f64> = sweeps.iter().map(|r| r[s].logit_difference).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((a.logit_difference_mean - mean).abs() < 1e-12);
            assert!((a.logit_difference_sd - var.sqrt()).abs() < 1e-9);
            assert_eq!(a.n, 4);
        }
    }

    #[test]
    fn aggregation_rejects_mismatched_sweeps() {
        let (weights, inputs) = setup();
        let a = lens_sweep(&weights, &inputs, &default_lens_sites(3), ProjectionMode::Raw)
            .unwrap();
        let b = lens_sweep(&weights, &inputs, &default_lens_sites(2), ProjectionMode::Raw)
            .unwrap();
        assert!(aggregate_lens(&[a.clone(), b]).is_err());
        let c = lens_sweep(
            &weights,
            &inputs,
            &default_lens_sites(3),
            ProjectionMode::WithFinalLn,
        )
        .unwrap();
        assert!(aggregate_lens(&[a, c]).is_err());
        assert!(aggregate_lens(&[]).is_err());
    }

    #[test]
    fn sites_at_fixed_positions_are_honored() {
        let (weights, inputs) = setup();
        let at2 = HookSite::at(Site::LayerOut(2), 2);
        let last = HookSite { site: Site::LayerOut(2), position: TokenPos::Last };
        let records =
            lens_sweep(&weights, &inputs, &[at2, last], ProjectionMode::WithFinalLn).unwrap();
        assert_eq!(records[0].site, at2);
        assert_ne!(records[0].answer_logits, records[1].answer_logits);
    }
}
