use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, CellReport, Modality, Report, ShiftCategory};
use crate::reasoner::Ablation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn pct(rate: f64) -> String {
    format!("{:.1}", rate * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const CSV_HEADER: &str = "shift,modality,ablation,episodes,successes,success_pct,success_ci90_low_pct,\
success_ci90_high_pct,grounding_correct,grounding_pct,obstacle_contacts,guidance_events,mean_staleness,\
max_staleness,trace_digest";

/// One row per cell, in report order.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        let (lo, hi) = c.success_interval();
        let s = &c.suite;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{}",
            s.shift.name(),
            s.modality.name(),
            csv_field(&s.ablation.label()),
            c.episodes,
            c.successes,
            pct(c.success_rate()),
            pct(lo),
            pct(hi),
            c.grounding_correct,
            pct(c.grounding_rate()),
            c.obstacle_contacts,
            c.guidance_events,
            c.mean_staleness,
            c.max_staleness,
            c.trace_digest,
        );
    }
    out
}

fn find(report: &Report, shift: ShiftCategory, m: Modality, a: Ablation) -> Option<&CellReport> {
    report
        .cells
        .iter()
        .find(|c| c.suite.shift == shift && c.suite.modality == m && c.suite.ablation == a)
}

fn matrix(out: &mut String, report: &Report, title: &str, value: impl Fn(&CellReport) -> f64) {
    let _ = writeln!(out, "## {title}\n");
    out.push_str("| shift |");
    for m in Modality::ALL {
        let _ = write!(out, " {} |", m.name());
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(Modality::ALL.len()));
    out.push('\n');
    let shifts: BTreeSet<ShiftCategory> = report
        .cells
        .iter()
        .filter(|c| c.suite.ablation.is_none())
        .map(|c| c.suite.shift)
        .collect();
    for shift in shifts {
        let _ = write!(out, "| {} |", shift.name());
        for m in Modality::ALL {
            match find(report, shift, m, Ablation::NONE) {
                Some(c) => {
                    let _ = write!(out, " {} |", pct(value(c)));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

fn ablation_table(out: &mut String, report: &Report) {
    out.push_str("## CoT ablations (success %)\n\n");
    // columns: every (shift, modality) that has at least one ablated cell
    let columns: BTreeSet<(ShiftCategory, Modality)> = report
        .cells
        .iter()
        .filter(|c| !c.suite.ablation.is_none())
        .map(|c| (c.suite.shift, c.suite.modality))
        .collect();
    let mut rows: Vec<Ablation> = vec![Ablation::NONE];
    for c in &report.cells {
        if !c.suite.ablation.is_none() && !rows.contains(&c.suite.ablation) {
            rows.push(c.suite.ablation);
        }
    }
    out.push_str("| variant |");
    for (s, m) in &columns {
        let _ = write!(out, " {}/{} |", s.name(), m.name());
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    if columns.is_empty() {
        return;
    }
    for a in rows {
        let _ = write!(out, "| {} |", a.label());
        for (s, m) in &columns {
            match find(report, *s, *m, a) {
                Some(c) => {
                    let _ = write!(out, " {} |", pct(c.success_rate()));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
}

/// Success and grounding matrices (shift × modality, unablated cells) and
/// the ablation table.
pub fn render_markdown(report: &Report) -> String {
    let mut out = String::from("# Benchmark report\n\n");
    let _ = writeln!(out, "- config hash: `{}`", report.config_hash);
    let _ = writeln!(out, "- model hash: `{}`", report.model_hash);
    let episodes: usize = report.cells.iter().map(|c| c.episodes).sum();
    let _ = writeln!(out, "- cells: {}, episodes: {episodes}\n", report.cells.len());
    matrix(&mut out, report, "Success rate (%)", CellReport::success_rate);
    matrix(&mut out, report, "Grounding correct (%)", CellReport::grounding_rate);
    ablation_table(&mut out, report);
    out
}

/// Writes `report.csv` and/or `report.md` under `dir`.
pub fn emit_report(report: &Report, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("report.csv", render_csv(report)),
            ReportFormat::Markdown => ("report.md", render_markdown(report)),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
