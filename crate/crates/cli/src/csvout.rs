//! CSV tables with fixed schemas. Floats are written with Rust's shortest
//! round-trip formatting, so identical inputs yield identical bytes.

use mcqa_lens::eval::ConsistencyReport;
use mcqa_lens::interp::{HeadHeatmap, LensAggregate, PatchSweep, ProjectionRecord};
use mcqa_lens::model::Site;
use mcqa_lens::train::{CheckpointTable, GradCheckReport};

/// `layer` column value and `site` label for a projection record's site.
fn site_columns(site: Site) -> (i64, String) {
    match site {
        Site::Embed => (-1, "embed".to_string()),
        Site::LayerOut(l) => (l as i64, "layer_out".to_string()),
        Site::MhsaOut(l) => (l as i64, "mhsa_out".to_string()),
        Site::MlpOut(l) => (l as i64, "mlp_out".to_string()),
        Site::HeadOut { layer, head } => (layer as i64, format!("head_out:{head}")),
        Site::Final => (-1, "final".to_string()),
    }
}

pub const LENS_HEADER: &str = "instance_id,position,layer,site,mode,sym_1_logit,sym_2_logit,\
sym_3_logit,sym_4_logit,sym_1_probit,sym_2_probit,sym_3_probit,sym_4_probit,max_other_logit,\
max_other_probit,logit_diff";

/// One row per (instance, gold position, site).
pub fn lens_csv(records: &[(usize, usize, Vec<ProjectionRecord>)]) -> String {
    let mut out = String::from(LENS_HEADER);
    out.push('\n');
    for (instance_id, position, recs) in records {
        for r in recs {
            let (layer, site) = site_columns(r.site.site);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                instance_id,
                position,
                layer,
                site,
                r.mode.name(),
                r.answer_logits[0],
                r.answer_logits[1],
                r.answer_logits[2],
                r.answer_logits[3],
                r.answer_probits[0],
                r.answer_probits[1],
                r.answer_probits[2],
                r.answer_probits[3],
                r.max_other_logit,
                r.max_other_probit,
                r.logit_difference,
            ));
        }
    }
    out
}

pub const LENS_AGGREGATE_HEADER: &str = "layer,site,mode,n,sym_1_logit_mean,sym_2_logit_mean,\
sym_3_logit_mean,sym_4_logit_mean,sym_1_probit_mean,sym_2_probit_mean,sym_3_probit_mean,\
sym_4_probit_mean,max_other_logit_mean,max_other_probit_mean,logit_diff_mean,logit_diff_sd,\
probit_diff_mean,probit_diff_sd";

/// One row per site, averaged over the swept prompts.
pub fn lens_aggregate_csv(aggregates: &[LensAggregate]) -> String {
    let mut out = String::from(LENS_AGGREGATE_HEADER);
    out.push('\n');
    for a in aggregates {
        let (layer, site) = site_columns(a.site.site);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            layer,
            site,
            a.mode.name(),
            a.n,
            a.answer_logits_mean[0],
            a.answer_logits_mean[1],
            a.answer_logits_mean[2],
            a.answer_logits_mean[3],
            a.answer_probits_mean[0],
            a.answer_probits_mean[1],
            a.answer_probits_mean[2],
            a.answer_probits_mean[3],
            a.max_other_logit_mean,
            a.max_other_probit_mean,
            a.logit_difference_mean,
            a.logit_difference_sd,
            a.probit_difference_mean,
            a.probit_difference_sd,
        ));
    }
    out
}

pub const PATCH_HEADER: &str =
    "instance_id,layer,site,head,metric_space,sym_1,sym_2,sym_3,sym_4,predicted";

/// Two rows (logit and probit space) per patched site and qualifying pair.
pub fn patch_csv(sweep: &PatchSweep) -> String {
    let mut out = String::from(PATCH_HEADER);
    out.push('\n');
    let site = sweep.family.name();
    for row in &sweep.rows {
        let head = row.head.map(|h| h.to_string()).unwrap_or_default();
        for (space, scores) in [
            ("logit", &row.outcome.answer_logits),
            ("probit", &row.outcome.answer_probits),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.pair,
                row.layer,
                site,
                head,
                space,
                scores[0],
                scores[1],
                scores[2],
                scores[3],
                row.outcome.predicted_symbol,
            ));
        }
    }
    out
}

pub const PATCH_CELLS_HEADER: &str =
    "layer,head,space,sym_1,sym_2,sym_3,sym_4,transfer_rate";

/// Two rows (logit and probit space) per swept site, averaged over pairs.
pub fn patch_cells_csv(sweep: &PatchSweep) -> String {
    let mut out = String::from(PATCH_CELLS_HEADER);
    out.push('\n');
    for c in &sweep.cells {
        let head = c.head.map(|h| h.to_string()).unwrap_or_default();
        for (space, scores) in [
            ("logit", &c.mean_answer_logits),
            ("probit", &c.mean_answer_probits),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.layer,
                head,
                space,
                scores[0],
                scores[1],
                scores[2],
                scores[3],
                c.source_transfer_rate,
            ));
        }
    }
    out
}

pub const HEATMAP_HEADER: &str = "layer,head,metric,space,value,n_instances";

/// Four rows per head: {sum, diff} x {logit, probit}.
pub fn heatmap_csv(map: &HeadHeatmap) -> String {
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for c in &map.cells {
        for (metric, space, value) in [
            ("sum", "logit", c.sum_logit),
            ("diff", "logit", c.diff_logit),
            ("sum", "probit", c.sum_probit),
            ("diff", "probit", c.diff_probit),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.layer, c.head, metric, space, value, map.n_correct
            ));
        }
    }
    out
}

pub const EVAL_HEADER: &str = "symbol_set,position,accuracy,n";

/// One row per (symbol set, gold position).
pub fn eval_csv(report: &ConsistencyReport) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for set in &report.sets {
        for (position, acc) in set.per_position.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                set.symbol_set, position, acc, report.n_instances
            ));
        }
    }
    out
}

/// `step` plus the table's own columns, one row per checkpoint.
pub fn checkpoint_table_csv(table: &CheckpointTable) -> String {
    let mut out = String::from("step");
    for c in &table.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.step.to_string());
        for v in &row.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub const GENERATIVE_HEADER: &str = "accuracy,n";

pub fn generative_csv(accuracy: f64, n: usize) -> String {
    format!("{GENERATIVE_HEADER}\n{accuracy},{n}\n")
}

pub const GRAD_CHECK_HEADER: &str = "tensor,index,analytic,numeric,abs_err,rel_err";

pub fn grad_check_csv(report: &GradCheckReport) -> String {
    let mut out = String::from(GRAD_CHECK_HEADER);
    out.push('\n');
    for c in &report.coords {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.tensor, c.index, c.analytic, c.numeric, c.abs_err, c.rel_err
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcqa_lens::eval::SetReport;

    #[test]
    fn eval_rows_flatten_the_report() {
        let report = ConsistencyReport {
            sets: vec![SetReport {
                symbol_set: "ABCD".into(),
                per_position: [1.0, 0.5, 0.25, 0.0],
                mean: 0.4375,
            }],
            min_over_sets: 0.4375,
            n_instances: 8,
            prompts_per_instance: 4,
            ties: 0,
        };
        let csv = eval_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], EVAL_HEADER);
        assert_eq!(lines[1], "ABCD,0,1,8");
        assert_eq!(lines[3], "ABCD,2,0.25,8");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn site_labels_cover_every_site_kind() {
        assert_eq!(site_columns(Site::Embed), (-1, "embed".into()));
        assert_eq!(site_columns(Site::LayerOut(2)), (2, "layer_out".into()));
        assert_eq!(
            site_columns(Site::HeadOut { layer: 1, head: 3 }),
            (1, "head_out:3".into())
        );
    }

}
