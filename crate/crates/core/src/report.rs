//! Run reports in JSON, Markdown and CSV. Values are masked.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{format_rate, funnel, leakage, reject_rate, Comparison, FunnelRow, LeakageRates, RunData, MAX_LEVEL};
use crate::taxonomy::{AttributeId, PrivacyCategory, Taxonomy};
use crate::verification::{mask_value, CandidateRecord, CandidateStatus};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected json, md or csv)")]
    UnknownFormat(String),
    #[error("report serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLeak {
    pub id: String,
    pub attribute: AttributeId,
    pub category: PrivacyCategory,
    pub masked_value: String,
    pub search_total: Option<u64>,
    pub reviewers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub models: BTreeMap<String, String>,
    pub ablation: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub generated_at: DateTime<Utc>,
    pub meta: ReportMeta,
    pub funnel: Vec<FunnelRow>,
    pub total: FunnelRow,
    pub leakage: Vec<LeakageRates>,
    pub reject_rate: f64,
    pub confirmed: Vec<MaskedLeak>,
    pub potential: Vec<MaskedLeak>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

const LEVEL_NOTE: &str = "LP and IL columns count tests with at least L confirmed values (L = 1, 2, 3), per thousand accepted tests.";

fn masked(taxonomy: &Taxonomy, r: &CandidateRecord) -> MaskedLeak {
    let value = match taxonomy.attribute(&r.candidate.attribute) {
        Some(spec) => mask_value(&r.candidate.value, &spec.mask_policy),
        None => "*".repeat(r.candidate.value.chars().count()),
    };
    MaskedLeak {
        id: r.candidate.id.clone(),
        attribute: r.candidate.attribute.clone(),
        category: r.candidate.category,
        masked_value: value,
        search_total: r.search.as_ref().map(|s| s.total),
        reviewers: r.reviews.iter().map(|x| x.reviewer.clone()).collect(),
    }
}

/// Masked leaks with `status`, ordered by attribute then id.
pub fn masked_leaks(taxonomy: &Taxonomy, records: &[CandidateRecord], status: CandidateStatus) -> Vec<MaskedLeak> {
    let mut v: Vec<MaskedLeak> = records.iter().filter(|r| r.status == status).map(|r| masked(taxonomy, r)).collect();
    v.sort_by(|a, b| (&a.attribute, &a.id).cmp(&(&b.attribute, &b.id)));
    v
}

pub fn build_report(taxonomy: &Taxonomy, run_id: &str, data: &RunData, mut meta: ReportMeta, at: DateTime<Utc>) -> Report {
    let (rows, total) = funnel(taxonomy, data);
    if !meta.notes.iter().any(|n| n == LEVEL_NOTE) {
        meta.notes.push(LEVEL_NOTE.to_string());
    }
    Report {
        run_id: run_id.to_string(),
        generated_at: at,
        meta,
        funnel: rows,
        total,
        leakage: leakage(data, MAX_LEVEL),
        reject_rate: reject_rate(data),
        confirmed: masked_leaks(taxonomy, &data.records, CandidateStatus::Confirmed),
        potential: masked_leaks(taxonomy, &data.records, CandidateStatus::Potential),
        comparison: None,
    }
}

pub fn render(report: &Report, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => render_json(report),
        Format::Markdown => Ok(render_markdown(report)),
        Format::Csv => funnel_csv(report),
    }
}

pub fn render_json(report: &Report) -> Result<String, ReportError> {
    serde_json::to_string_pretty(report).map(|s| s + "\n").map_err(|e| ReportError::Serialize(e.to_string()))
}

/// Funnel table as CSV with rates rounded to one decimal.
pub fn funnel_csv(report: &Report) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ReportError::Serialize(e.to_string());
    w.write_record([
        "attribute",
        "planned_tests",
        "accepted_tests",
        "extracted",
        "judge_passed",
        "search_in_range",
        "confirmed",
        "potential",
        "permille_accepted",
        "permille_planned",
    ])
    .map_err(err)?;
    for r in report.funnel.iter().chain([&report.total]) {
        w.write_record([
            r.attribute.clone(),
            r.planned_tests.to_string(),
            r.accepted_tests.to_string(),
            r.extracted.to_string(),
            r.judge_passed.to_string(),
            r.search_in_range.to_string(),
            r.confirmed.to_string(),
            r.potential.to_string(),
            format_rate(r.permille_accepted),
            format_rate(r.permille_planned),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Serialize(e.to_string()))
}

/// Confirmed leaks as pretty JSON, without timestamps.
pub fn confirmed_json(report: &Report) -> Result<String, ReportError> {
    serde_json::to_string_pretty(&report.confirmed).map(|s| s + "\n").map_err(|e| ReportError::Serialize(e.to_string()))
}

pub fn render_markdown(report: &Report) -> String {
    let mut s = format!("# Leakage audit report: {}\n\n", report.run_id);
    s.push_str(&format!("Generated {}.\n\n", report.generated_at.format("%Y-%m-%d %H:%M:%S UTC")));
    if !report.meta.models.is_empty() {
        s.push_str("## Models\n\n");
        for (role, model) in &report.meta.models {
            s.push_str(&format!("- {role}: {model}\n"));
        }
        s.push('\n');
    }
    if !report.meta.ablation.is_empty() {
        s.push_str("## Components\n\n");
        for (k, on) in &report.meta.ablation {
            s.push_str(&format!("- {k}: {}\n", if *on { "on" } else { "off" }));
        }
        s.push('\n');
    }
    s.push_str("## Funnel\n\n");
    s.push_str("| Attribute | Planned | Accepted | Extracted | Judge passed | In search window | Confirmed | Potential | ‰ accepted | ‰ planned |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in report.funnel.iter().chain([&report.total]) {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.attribute,
            r.planned_tests,
            r.accepted_tests,
            r.extracted,
            r.judge_passed,
            r.search_in_range,
            r.confirmed,
            r.potential,
            format_rate(r.permille_accepted),
            format_rate(r.permille_planned)
        ));
    }
    s.push_str(&format!("\nRefusal rate of the audited model: {:.1}%\n\n", report.reject_rate * 100.0));
    s.push_str("## Leakage by category\n\n| Category | Accepted tests |");
    for l in 1..=MAX_LEVEL {
        s.push_str(&format!(" LP≥{l} |"));
    }
    for l in 1..=MAX_LEVEL {
        s.push_str(&format!(" IL≥{l} |"));
    }
    s.push_str("\n|---|---:|");
    s.push_str(&"---:|".repeat(2 * MAX_LEVEL));
    s.push('\n');
    for r in &report.leakage {
        s.push_str(&format!("| {} | {} |", r.category, r.accepted_tests));
        for x in r.lp.iter().chain(&r.il) {
            s.push_str(&format!(" {} |", format_rate(*x)));
        }
        s.push('\n');
    }
    if let Some(c) = &report.comparison {
        s.push_str(&format!(
            "\n## Comparison\n\nOverlap {} of {} (run) and {} (reference): PP {:.1}%, PR {:.1}%, PF1 {:.1}%\n",
            c.overlap, c.run_confirmed, c.reference_confirmed, c.pp, c.pr, c.pf1
        ));
    }
    for (title, list) in [("Confirmed leaks", &report.confirmed), ("Potential leaks", &report.potential)] {
        s.push_str(&format!("\n## {title}\n\n"));
        if list.is_empty() {
            s.push_str("None.\n");
            continue;
        }
        s.push_str("| Attribute | Value | Search hits |\n|---|---|---:|\n");
        for m in list {
            let hits = m.search_total.map(|h| h.to_string()).unwrap_or_default();
            s.push_str(&format!("| {} | `{}` | {} |\n", m.attribute, m.masked_value, hits));
        }
    }
    if !report.meta.notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for n in &report.meta.notes {
            s.push_str(&format!("- {n}\n"));
        }
    }
    s
}
