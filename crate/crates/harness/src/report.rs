//! CSV and Markdown reports, the per-image manifest and image previews.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bast_core::evaluation::{classify_outcome, round_half_away, Evaluation, ModelScore, Outcome, Protocol};
use bast_core::model::Classifier;
use bast_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{AttackPlan, EvalSet};
use crate::tensor_io;

fn pct(v: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_away(v, decimals))
}

/// A and B with one decimal, C with two (C can end in .x5).
pub fn cell(score: &ModelScore) -> (String, String, String) {
    (pct(score.a, 1), pct(score.b, 1), pct(score.c, 2))
}

pub fn report_csv(plans: &[AttackPlan], evaluations: &[Evaluation], eval: &EvalSet) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy", "model", "protocol", "A", "B", "C", "targeted", "nontargeted_only", "failed", "images",
    ])?;
    for (plan, evaluation) in plans.iter().zip(evaluations) {
        for (row, preds) in evaluation.report.rows.iter().zip(&evaluation.predictions) {
            let mut counts = [0usize; 3];
            for (i, &p) in preds.iter().enumerate() {
                let slot = match classify_outcome(p, eval.y_true[i], eval.y_target[i]) {
                    Outcome::TargetedSuccess => 0,
                    Outcome::NonTargetedOnly => 1,
                    Outcome::Fail => 2,
                };
                counts[slot] += 1;
            }
            let (a, b, c) = cell(row);
            w.write_record(&[
                plan.label.clone(),
                row.model_id.clone(),
                row.protocol.to_string(),
                a,
                b,
                c,
                counts[0].to_string(),
                counts[1].to_string(),
                counts[2].to_string(),
                row.images.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::format("report.csv", e.to_string()))
}

fn header(out: &mut String, first: &str, columns: &[String]) {
    let _ = writeln!(out, "| {first} | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
}

/// One grid row per plan and one `A / B / C` cell per model; black-box
/// models carry a `*`.
pub fn report_md(plans: &[AttackPlan], evaluations: &[Evaluation], images: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Attack results\n");
    let _ = writeln!(
        out,
        "{images} images. Cells are A / B / C in percent: A non-targeted only, B targeted, C = B + A/2. `*` marks black-box models.\n"
    );
    let Some(first) = evaluations.first() else {
        return out;
    };
    let columns: Vec<String> = first
        .report
        .rows
        .iter()
        .map(|r| match r.protocol {
            Protocol::WhiteBox => r.model_id.clone(),
            Protocol::BlackBox => format!("{}*", r.model_id),
        })
        .collect();
    header(&mut out, "Attack", &columns);
    for (plan, evaluation) in plans.iter().zip(evaluations) {
        let cells: Vec<String> = evaluation
            .report
            .rows
            .iter()
            .map(|r| {
                let (a, b, c) = cell(r);
                format!("{a} / {b} / {c}")
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", plan.label, cells.join(" | "));
    }
    let sweeps: Vec<_> = plans
        .iter()
        .zip(evaluations)
        .filter(|(p, _)| p.label != p.strategy.name())
        .collect();
    for (plan, evaluation) in sweeps {
        let _ = writeln!(out, "\n## {}\n", plan.label);
        header(&mut out, "Model", &["A".into(), "B".into(), "C".into()]);
        for (r, col) in evaluation.report.rows.iter().zip(&columns) {
            let (a, b, c) = cell(r);
            let _ = writeln!(out, "| {col} | {a} | {b} | {c} |");
        }
    }
    out
}

pub fn manifest_csv(
    models: &[Classifier],
    eval: &EvalSet,
    plans: &[AttackPlan],
    adversarial: &[Vec<Tensor>],
    evaluations: &[Evaluation],
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = ["strategy", "image", "source", "y_true", "y_target"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    head.extend(models.iter().map(|m| format!("pred_{}", m.id())));
    head.push("linf".into());
    w.write_record(&head)?;
    for ((plan, adv), evaluation) in plans.iter().zip(adversarial).zip(evaluations) {
        for (i, x) in adv.iter().enumerate() {
            let mut rec = vec![
                plan.label.clone(),
                i.to_string(),
                eval.source[i].to_string(),
                eval.y_true[i].to_string(),
                eval.y_target[i].to_string(),
            ];
            rec.extend(evaluation.predictions.iter().map(|p| p[i].to_string()));
            rec.push(x.linf_distance(&eval.images[i])?.to_string());
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::format("manifest.csv", e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn write_all(
    cfg: &ExperimentConfig,
    models: &[Classifier],
    eval: &EvalSet,
    plans: &[AttackPlan],
    adversarial: &[Vec<Tensor>],
    evaluations: &[Evaluation],
) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write(&dir.join("report.csv"), &report_csv(plans, evaluations, eval)?)?;
    write(&dir.join("report.md"), report_md(plans, evaluations, eval.len()).as_bytes())?;
    write(
        &dir.join("manifest.csv"),
        &manifest_csv(models, eval, plans, adversarial, evaluations)?,
    )?;
    if cfg.preview_count > 0 {
        let previews = dir.join("previews");
        fs::create_dir_all(&previews).map_err(|e| HarnessError::io(&previews, e))?;
        for (plan, adv) in plans.iter().zip(adversarial) {
            for (i, x) in adv.iter().enumerate().take(cfg.preview_count) {
                let stem = format!("{}_{i:04}", plan.slug());
                tensor_io::write_previews(&previews, &stem, &eval.images[i], x, cfg.epsilon)?;
            }
        }
    }
    Ok(())
}
