//! Command orchestration: load inputs, run the analysis, write the manifest
//! first and then every table and figure into the output directory.

use std::fs;
use std::ops::Range;
use std::path::Path;

use mcqa_lens::data::colors::vocab_corpus;
use mcqa_lens::data::{
    gen_colors, load_mcqa_jsonl, render_prompt, save_mcqa_jsonl, ColorsDataset, McqaInstance,
    PromptSpec, SymbolSet, Vocab,
};
use mcqa_lens::error::{Error, Result};
use mcqa_lens::eval::{
    consistency_with_outcomes, eval_generative, PromptInputs, TransformerScorer,
};
use mcqa_lens::interp::{
    aggregate_lens, default_lens_sites, head_heatmap, lens_sweep, patch_sweep, HeadHeatmap,
    PatchSweep, SiteFamily,
};
use mcqa_lens::model::{load_checkpoint, ModelConfig, Weights};
use mcqa_lens::train::{
    grad_check_tiny, sweep_checkpoints, train, CheckpointSeries, CheckpointTable, SweepAnalysis,
    TrainConfig,
};

use crate::args::{
    Command, EvalArgs, EvalGenerativeArgs, GenColorsArgs, GradCheckArgs, HeadsArgs, LensArgs,
    ModelInputs, PatchArgs, PatchSweepArgs, SweepCheckpointsArgs, TrainArgs,
};
use crate::csvout;
use crate::manifest::RunManifest;
use crate::svg::{self, Series};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenColors(a) => run_gen_colors(&a),
        Command::Train(a) => run_train(&a),
        Command::GradCheck(a) => run_grad_check(&a),
        Command::Eval(a) => run_eval(&a),
        Command::EvalGenerative(a) => run_eval_generative(&a),
        Command::Lens(a) => run_lens(&a),
        Command::Patch(a) => run_patch(&a),
        Command::PatchSweep(a) => run_patch_sweep(&a),
        Command::Heads(a) => run_heads(&a),
        Command::SweepCheckpoints(a) => run_sweep_checkpoints(&a),
    }
}

/// Everything a checkpoint-driven experiment starts from.
struct Loaded {
    weights: Weights<f32>,
    vocab: Vocab,
    dataset: ColorsDataset,
}

/// First three instances are the in-context examples; the rest are the test
/// cohort, optionally truncated.
fn split_dataset(all: Vec<McqaInstance>, cohort_size: usize) -> Result<ColorsDataset> {
    if all.len() < 4 {
        return Err(Error::Config(format!(
            "dataset has {} instances; need at least 4 (3 in-context + 1 test)",
            all.len()
        )));
    }
    let mut rest = all;
    let test_all = rest.split_off(3);
    let icl = rest;
    let mut test = test_all;
    if cohort_size > 0 && cohort_size < test.len() {
        test.truncate(cohort_size);
    }
    Ok(ColorsDataset { icl, test })
}

fn load_model_inputs(args: &ModelInputs) -> Result<Loaded> {
    let weights = load_checkpoint(&args.ckpt)?;
    let vocab = Vocab::load(&args.vocab)?;
    if weights.config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint expects a vocabulary of {} tokens but {} has {}",
            weights.config.vocab_size,
            args.vocab.display(),
            vocab.len()
        )));
    }
    let dataset = split_dataset(load_mcqa_jsonl(&args.dataset)?, args.cohort_size)?;
    Ok(Loaded { weights, vocab, dataset })
}

fn start_manifest(command: &str, inputs: &ModelInputs, outputs: &[&str]) -> Result<RunManifest> {
    Ok(RunManifest::new(command)
        .with_checkpoint(&inputs.ckpt)?
        .with_input(&inputs.dataset)
        .with_input(&inputs.vocab)
        .with_outputs(outputs))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// Writes a figure, or warns when there was nothing finite to draw.
fn write_figure(dir: &Path, name: &str, rendered: Option<String>) -> Result<()> {
    match rendered {
        Some(svg) => write_text(dir, name, &svg),
        None => {
            eprintln!("warning: skipped {name}: no finite data to draw");
            Ok(())
        }
    }
}

/// One rendered prompt per (test instance, gold position).
fn build_prompts(
    dataset: &ColorsDataset,
    vocab: &Vocab,
    symbols: SymbolSet,
    positions: &[usize],
    shots: usize,
    icl_seed: u64,
) -> Result<Vec<(usize, usize, PromptInputs)>> {
    let mut prompts = Vec::new();
    for (i, inst) in dataset.test.iter().enumerate() {
        for &position in positions {
            let spec = PromptSpec { symbols, correct_position: position, shots, icl_seed };
            let rendered = render_prompt(inst, &dataset.icl, &spec)?;
            prompts.push((i, position, PromptInputs::from_rendered(vocab, &rendered)?));
        }
    }
    Ok(prompts)
}

fn layer_range(requested: Option<crate::args::LayerRange>, layers: usize) -> Range<usize> {
    match requested {
        Some(r) => r.start..r.end,
        None => 0..layers,
    }
}

fn run_gen_colors(a: &GenColorsArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let dataset = gen_colors(a.seed);
    let vocab = Vocab::build(&vocab_corpus(&dataset, &[])?);
    RunManifest::new("gen-colors")
        .with_outputs(&["colors.jsonl", "vocab.json"])
        .write(&a.out)?;
    save_mcqa_jsonl(&a.out.join("colors.jsonl"), &dataset.all())?;
    vocab.save(&a.out.join("vocab.json"))?;
    println!(
        "wrote {} instances (3 in-context + {} test) and a {}-token vocabulary to {}",
        dataset.all().len(),
        dataset.test.len(),
        vocab.len(),
        a.out.display()
    );
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let dataset = split_dataset(load_mcqa_jsonl(&a.dataset)?, 0)?;
    let model = ModelConfig::new(a.model_layers, a.model_heads, a.d_model, vocab.len(), a.max_seq);
    let mut config = TrainConfig::new(model, a.steps, a.checkpoint_every);
    config.batch_size = a.batch_size;
    config.lr = a.lr;
    config.warmup_steps = a.warmup_steps;
    config.weight_decay = a.weight_decay;
    config.generative_fraction = a.generative_fraction;
    config.shots = a.shots;
    config.seed = a.seed;
    config.eval_cohort = a.eval_cohort;

    fs::create_dir_all(&a.out)?;
    RunManifest::new("train")
        .with_input(&a.dataset)
        .with_input(&a.vocab)
        .with_outputs(&["series.json", "train_log.csv", "train_loss.svg"])
        .write(&a.out)?;

    let series = train(&config, &dataset, &vocab, &a.out)?;

    let log = fs::read_to_string(a.out.join("train_log.csv"))?;
    let points: Vec<(f64, f64)> = log
        .lines()
        .skip(1)
        .filter_map(|line| {
            let mut cols = line.split(',');
            let step = cols.next()?.parse().ok()?;
            let loss = cols.next()?.parse().ok()?;
            Some((step, loss))
        })
        .collect();
    let loss_series = [Series { name: "mean cross-entropy".into(), points }];
    write_figure(
        &a.out,
        "train_loss.svg",
        svg::line_plot("training loss", "step", "loss", &loss_series),
    )?;

    let last = series.snapshots.last().expect("a finished run has snapshots");
    println!(
        "trained {} steps; final loss {:.4}; last snapshot: min-over-sets {:.4}, generative {:.4}",
        config.steps, series.final_loss, last.eval.min_over_sets, last.eval.generative_accuracy
    );
    println!("checkpoints and series.json in {}", a.out.display());
    Ok(())
}

fn run_grad_check(a: &GradCheckArgs) -> Result<()> {
    let report = grad_check_tiny(a.seed)?;
    let worst = report.worst().expect("the tiny check samples coordinates");
    println!(
        "checked {} coordinates: max relative error {:.3e} (floor {:.0e}, h {:.0e})",
        report.coords.len(),
        report.max_rel_err,
        report.floor,
        report.h
    );
    println!(
        "worst coordinate: {}[{}] analytic {:.6e} vs numeric {:.6e}",
        worst.tensor, worst.index, worst.analytic, worst.numeric
    );
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        RunManifest::new("grad-check").with_outputs(&["grad_check.csv"]).write(out)?;
        write_text(out, "grad_check.csv", &csvout::grad_check_csv(&report))?;
        println!("per-coordinate table in {}", out.display());
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest("eval", &a.inputs, &["eval.csv", "report.json"])?.write(&a.inputs.out)?;

    let mut scorer = TransformerScorer { weights: &loaded.weights, vocab: &loaded.vocab };
    let (report, _) = consistency_with_outcomes(
        &mut scorer,
        &loaded.dataset.test,
        &loaded.dataset.icl,
        a.inputs.shots,
        a.inputs.icl_seed,
        a.include_oebp,
    )?;

    write_text(&a.inputs.out, "eval.csv", &csvout::eval_csv(&report))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.inputs.out, "report.json", &json)?;

    for set in &report.sets {
        println!(
            "{:>5}: positions {:.4} {:.4} {:.4} {:.4}  mean {:.4}",
            set.symbol_set,
            set.per_position[0],
            set.per_position[1],
            set.per_position[2],
            set.per_position[3],
            set.mean
        );
    }
    println!(
        "min over sets {:.4} on {} instances ({} prompts each, {} ties)",
        report.min_over_sets, report.n_instances, report.prompts_per_instance, report.ties
    );
    Ok(())
}

fn run_eval_generative(a: &EvalGenerativeArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest("eval-generative", &a.inputs, &["generative.csv"])?.write(&a.inputs.out)?;

    let mut scorer = TransformerScorer { weights: &loaded.weights, vocab: &loaded.vocab };
    let accuracy = eval_generative(
        &mut scorer,
        &loaded.vocab,
        &loaded.dataset.test,
        &loaded.dataset.icl,
        a.inputs.shots,
    )?;
    let n = loaded.dataset.test.len();
    write_text(&a.inputs.out, "generative.csv", &csvout::generative_csv(accuracy, n))?;
    println!("generative accuracy {accuracy:.4} over {n} instances");
    Ok(())
}

fn run_lens(a: &LensArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest(
        "lens",
        &a.inputs,
        &["lens.csv", "lens_mean.csv", "lens_logit.svg", "lens_probit.svg"],
    )?
    .write(&a.inputs.out)?;

    let sites = default_lens_sites(loaded.weights.config.layers);
    let prompts = build_prompts(
        &loaded.dataset,
        &loaded.vocab,
        a.symbols,
        &a.positions.list(),
        a.inputs.shots,
        a.inputs.icl_seed,
    )?;
    let mut rows = Vec::with_capacity(prompts.len());
    for (instance, position, inputs) in &prompts {
        let records = lens_sweep(&loaded.weights, inputs, &sites, a.mode)?;
        rows.push((*instance, *position, records));
    }
    let per_prompt: Vec<_> = rows.iter().map(|(_, _, r)| r.clone()).collect();
    let aggregates = aggregate_lens(&per_prompt)?;

    write_text(&a.inputs.out, "lens.csv", &csvout::lens_csv(&rows))?;
    write_text(&a.inputs.out, "lens_mean.csv", &csvout::lens_aggregate_csv(&aggregates))?;

    let chars = a.symbols.chars();
    let layer_points = |f: &dyn Fn(&mcqa_lens::interp::LensAggregate) -> f64| -> Vec<(f64, f64)> {
        aggregates
            .iter()
            .enumerate()
            .map(|(l, agg)| (l as f64, f(agg)))
            .collect()
    };
    let mut logit_series = vec![Series {
        name: "logit difference".into(),
        points: layer_points(&|a| a.logit_difference_mean),
    }];
    let mut probit_series = vec![Series {
        name: "probit difference".into(),
        points: layer_points(&|a| a.probit_difference_mean),
    }];
    for i in 0..4 {
        logit_series.push(Series {
            name: format!("answer {}", chars[i]),
            points: layer_points(&move |a| a.answer_logits_mean[i]),
        });
        probit_series.push(Series {
            name: format!("answer {}", chars[i]),
            points: layer_points(&move |a| a.answer_probits_mean[i]),
        });
    }
    write_figure(
        &a.inputs.out,
        "lens_logit.svg",
        svg::line_plot(
            &format!("vocabulary projection ({})", a.mode.name()),
            "layer",
            "logit",
            &logit_series,
        ),
    )?;
    write_figure(
        &a.inputs.out,
        "lens_probit.svg",
        svg::line_plot(
            &format!("vocabulary projection ({})", a.mode.name()),
            "layer",
            "probit",
            &probit_series,
        ),
    )?;

    let last = aggregates.last().expect("at least one layer");
    println!(
        "{} prompts ({} set, positions {:?}, mode {})",
        rows.len(),
        a.symbols.name(),
        a.positions.list(),
        a.mode.name()
    );
    println!(
        "final layer: mean logit difference {:.4}, mean probit difference {:.4}",
        last.logit_difference_mean, last.probit_difference_mean
    );
    Ok(())
}

/// Source/target prompt pairs for patching, one pair per test instance.
fn build_pairs(
    loaded: &Loaded,
    source_symbols: SymbolSet,
    target_symbols: SymbolSet,
    source_position: usize,
    target_position: usize,
    shots: usize,
    icl_seed: u64,
) -> Result<Vec<(PromptInputs, PromptInputs)>> {
    let sources = build_prompts(
        &loaded.dataset,
        &loaded.vocab,
        source_symbols,
        &[source_position],
        shots,
        icl_seed,
    )?;
    let targets = build_prompts(
        &loaded.dataset,
        &loaded.vocab,
        target_symbols,
        &[target_position],
        shots,
        icl_seed,
    )?;
    Ok(sources
        .into_iter()
        .zip(targets)
        .map(|((_, _, s), (_, _, t))| (s, t))
        .collect())
}

/// Mean-score and transfer-rate line series from a sweep's per-site cells.
fn sweep_series(sweep: &PatchSweep, source_position: usize, target_position: usize) -> [Series; 3] {
    let cell_points = |f: &dyn Fn(&mcqa_lens::interp::SweepCell) -> f64| -> Vec<(f64, f64)> {
        sweep.cells.iter().map(|c| (c.layer as f64, f(c))).collect()
    };
    [
        Series {
            name: "source-gold position".into(),
            points: cell_points(&move |c| c.mean_answer_logits[source_position]),
        },
        Series {
            name: "target-gold position".into(),
            points: cell_points(&move |c| c.mean_answer_logits[target_position]),
        },
        Series {
            name: "transfer rate".into(),
            points: cell_points(&|c| c.source_transfer_rate),
        },
    ]
}

fn run_patch(a: &PatchArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest(
        "patch",
        &a.inputs,
        &["patch_rows.csv", "patch_cells.csv", "patch_logit.svg", "patch_transfer.svg"],
    )?
    .write(&a.inputs.out)?;

    let layers = layer_range(a.layers, loaded.weights.config.layers);
    let pairs = build_pairs(
        &loaded,
        a.source_symbols.unwrap_or(a.symbols),
        a.symbols,
        a.source_position,
        a.target_position,
        a.inputs.shots,
        a.inputs.icl_seed,
    )?;
    let sweep = patch_sweep(&loaded.weights, &pairs, a.site, layers)?;

    write_text(&a.inputs.out, "patch_rows.csv", &csvout::patch_csv(&sweep))?;
    write_text(&a.inputs.out, "patch_cells.csv", &csvout::patch_cells_csv(&sweep))?;

    if a.site == SiteFamily::HeadOut {
        let heads = loaded.weights.config.heads;
        let mut transfer = Vec::with_capacity(heads);
        for head in 0..heads {
            transfer.push(Series {
                name: format!("head {head}"),
                points: sweep
                    .cells
                    .iter()
                    .filter(|c| c.head == Some(head))
                    .map(|c| (c.layer as f64, c.source_transfer_rate))
                    .collect(),
            });
        }
        write_figure(
            &a.inputs.out,
            "patch_transfer.svg",
            svg::line_plot("patched-head transfer rate", "layer", "rate", &transfer),
        )?;
    } else {
        let series = sweep_series(&sweep, a.source_position, a.target_position);
        write_figure(
            &a.inputs.out,
            "patch_logit.svg",
            svg::line_plot(
                &format!("activation patching at {}", a.site.name()),
                "layer",
                "mean answer logit",
                &series[..2],
            ),
        )?;
        write_figure(
            &a.inputs.out,
            "patch_transfer.svg",
            svg::line_plot(
                &format!("transfer rate at {}", a.site.name()),
                "layer",
                "rate",
                &series[2..],
            ),
        )?;
    }

    println!(
        "patched {} at {} site(s): {} qualifying pairs, {} skipped",
        a.site.name(),
        sweep.cells.len(),
        sweep.qualifying,
        sweep.skipped
    );
    if let Some(last) = sweep.cells.iter().filter(|c| c.head.is_none()).next_back() {
        println!("last layer transfer rate {:.4}", last.source_transfer_rate);
    }
    Ok(())
}

fn run_patch_sweep(a: &PatchSweepArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest(
        "patch-sweep",
        &a.inputs,
        &[
            "sweep_layer_out.csv",
            "sweep_mhsa_out.csv",
            "sweep_mlp_out.csv",
            "sweep_logit.svg",
            "sweep_transfer.svg",
        ],
    )?
    .write(&a.inputs.out)?;

    let layers = layer_range(a.layers, loaded.weights.config.layers);
    let pairs = build_pairs(
        &loaded,
        a.symbols,
        a.symbols,
        a.source_position,
        a.target_position,
        a.inputs.shots,
        a.inputs.icl_seed,
    )?;

    let mut logit_series = Vec::new();
    let mut transfer_series = Vec::new();
    for family in [SiteFamily::LayerOut, SiteFamily::MhsaOut, SiteFamily::MlpOut] {
        let sweep = patch_sweep(&loaded.weights, &pairs, family, layers.clone())?;
        write_text(
            &a.inputs.out,
            &format!("sweep_{}.csv", family.name()),
            &csvout::patch_cells_csv(&sweep),
        )?;
        let series = sweep_series(&sweep, a.source_position, a.target_position);
        logit_series.push(Series {
            name: family.name().to_string(),
            points: series[0].points.clone(),
        });
        transfer_series.push(Series {
            name: family.name().to_string(),
            points: series[2].points.clone(),
        });
        println!(
            "{:>9}: {} qualifying pairs, {} skipped, last layer transfer {:.4}",
            family.name(),
            sweep.qualifying,
            sweep.skipped,
            sweep.cells.last().map(|c| c.source_transfer_rate).unwrap_or(f64::NAN)
        );
    }
    write_figure(
        &a.inputs.out,
        "sweep_logit.svg",
        svg::line_plot(
            "source-gold answer logit after patching",
            "layer",
            "mean logit",
            &logit_series,
        ),
    )?;
    write_figure(
        &a.inputs.out,
        "sweep_transfer.svg",
        svg::line_plot("transfer rate by site family", "layer", "rate", &transfer_series),
    )?;
    Ok(())
}

fn heatmap_grid(map: &HeadHeatmap, metric: &dyn Fn(&mcqa_lens::interp::HeatmapCell) -> f64) -> Vec<f64> {
    let heads = map.heads;
    let mut grid = vec![f64::NAN; map.layers.len() * heads];
    for cell in &map.cells {
        grid[(cell.layer - map.layers.start) * heads + cell.head] = metric(cell);
    }
    grid
}

fn run_heads(a: &HeadsArgs) -> Result<()> {
    let loaded = load_model_inputs(&a.inputs)?;
    fs::create_dir_all(&a.inputs.out)?;
    start_manifest(
        "heads",
        &a.inputs,
        &[
            "heads.csv",
            "heads_sum_logit.svg",
            "heads_diff_logit.svg",
            "heads_sum_probit.svg",
            "heads_diff_probit.svg",
        ],
    )?
    .write(&a.inputs.out)?;

    let layers = layer_range(a.layers, loaded.weights.config.layers);
    let prompts: Vec<PromptInputs> = build_prompts(
        &loaded.dataset,
        &loaded.vocab,
        a.symbols,
        &a.positions.list(),
        a.inputs.shots,
        a.inputs.icl_seed,
    )?
    .into_iter()
    .map(|(_, _, p)| p)
    .collect();
    let map = head_heatmap(&loaded.weights, &prompts, layers)?;

    write_text(&a.inputs.out, "heads.csv", &csvout::heatmap_csv(&map))?;

    let rows: Vec<usize> = map.layers.clone().collect();
    let cols: Vec<usize> = (0..map.heads).collect();
    let figures: [(&str, &dyn Fn(&mcqa_lens::interp::HeatmapCell) -> f64, &str); 4] = [
        ("heads_sum_logit.svg", &|c| c.sum_logit, "per-head answer logit sum"),
        ("heads_diff_logit.svg", &|c| c.diff_logit, "per-head gold-minus-best-other logit"),
        ("heads_sum_probit.svg", &|c| c.sum_probit, "per-head answer probit sum"),
        ("heads_diff_probit.svg", &|c| c.diff_probit, "per-head gold-minus-best-other probit"),
    ];
    for (name, metric, title) in figures {
        let grid = heatmap_grid(&map, metric);
        write_figure(
            &a.inputs.out,
            name,
            svg::heatmap(title, "layer", "head", &rows, &cols, &grid),
        )?;
    }

    println!(
        "head scores over {} of {} prompts answered correctly ({} set)",
        map.n_correct,
        map.n_total,
        a.symbols.name()
    );
    let top = map
        .cells
        .iter()
        .max_by(|a, b| a.diff_logit.abs().total_cmp(&b.diff_logit.abs()))
        .expect("at least one cell");
    println!(
        "largest |gold-minus-other| contribution: layer {} head {} ({:.4})",
        top.layer, top.head, top.diff_logit
    );
    Ok(())
}

fn run_sweep_checkpoints(a: &SweepCheckpointsArgs) -> Result<()> {
    let series = CheckpointSeries::load(&a.series)?;
    let series_dir = a.series.parent().unwrap_or(Path::new("."));
    let vocab = Vocab::load(&a.vocab)?;
    let dataset = split_dataset(load_mcqa_jsonl(&a.dataset)?, 0)?;
    let cohort =
        if a.cohort_size > 0 { a.cohort_size } else { series.config.eval_cohort };
    let shots = a.shots.unwrap_or(series.config.shots);
    let icl_seed = a.icl_seed.unwrap_or(series.eval_icl_seed);

    let analysis_name = a.analysis.name();
    let csv_name = format!("sweep_{analysis_name}.csv");
    let svg_name = format!("sweep_{analysis_name}.svg");
    fs::create_dir_all(&a.out)?;
    RunManifest::new("sweep-checkpoints")
        .with_input(&a.series)
        .with_input(&a.dataset)
        .with_input(&a.vocab)
        .with_outputs(&[&csv_name, &svg_name])
        .write(&a.out)?;

    let table = sweep_checkpoints(
        &series,
        series_dir,
        &dataset,
        &vocab,
        a.analysis,
        cohort,
        shots,
        icl_seed,
    )?;

    write_text(&a.out, &csv_name, &csvout::checkpoint_table_csv(&table))?;
    write_figure(&a.out, &svg_name, table_figure(&table, analysis_name))?;

    println!("{}", csvout::checkpoint_table_csv(&table).trim_end());
    Ok(())
}

/// Step-indexed line chart of a checkpoint table. The logit-difference curve
/// plots only its headline column; counts would dwarf it.
fn table_figure(table: &CheckpointTable, analysis_name: &str) -> Option<String> {
    let columns: Vec<usize> = if analysis_name == SweepAnalysis::LogitDifferenceCurve.name() {
        vec![0]
    } else {
        (0..table.columns.len()).collect()
    };
    let series: Vec<Series> = columns
        .into_iter()
        .map(|c| Series {
            name: table.columns[c].clone(),
            points: table
                .rows
                .iter()
                .map(|row| (row.step as f64, row.values[c]))
                .collect(),
        })
        .collect();
    svg::line_plot(&format!("{analysis_name} across checkpoints"), "step", "value", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohorts_smaller_than_the_dataset_truncate() {
        let all = gen_colors(0).all();
        let d = split_dataset(all.clone(), 10).unwrap();
        assert_eq!(d.icl.len(), 3);
        assert_eq!(d.test.len(), 10);
        let full = split_dataset(all, 0).unwrap();
        assert_eq!(full.test.len(), 105);
    }

    #[test]
    fn short_datasets_are_rejected() {
        let all = gen_colors(0).all()[..3].to_vec();
        assert!(split_dataset(all, 0).is_err());
    }
}
