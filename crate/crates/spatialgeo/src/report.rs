//! Report, loss-log and similarity files. Every writer is a pure function
//! of its input, so reruns produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use spatialgeo_core::diagnostics::{TapSimilarity, SIMILARITY_CSV_HEADER};
use spatialgeo_core::eval::Report;
use spatialgeo_core::training::{LossEntry, LOSS_CSV_HEADER};

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct CategoryJson<'a> {
    category: &'a str,
    total: usize,
    correct: usize,
    parse_failures: usize,
    /// Absent when the category has no records.
    accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    categories: Vec<CategoryJson<'a>>,
    total: usize,
    correct: usize,
    parse_failures: usize,
    average: f64,
}

pub fn report_json(r: &Report) -> String {
    let j = ReportJson {
        categories: r
            .categories
            .iter()
            .map(|c| CategoryJson {
                category: c.category.name(),
                total: c.total,
                correct: c.correct,
                parse_failures: c.parse_failures,
                accuracy: c.accuracy(),
            })
            .collect(),
        total: r.total,
        correct: r.correct,
        parse_failures: r.parse_failures,
        average: r.average(),
    };
    let mut s = serde_json::to_string_pretty(&j).expect("report serializes");
    s.push('\n');
    s
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
}

fn pct(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.2}")).unwrap_or_default()
}

/// Per-category table with a closing `average` row.
pub fn report_csv(r: &Report) -> String {
    let mut rows = vec![vec!["category", "total", "correct", "parse_failures", "accuracy"].into_iter().map(String::from).collect()];
    for c in &r.categories {
        rows.push(vec![
            c.category.name().into(),
            c.total.to_string(),
            c.correct.to_string(),
            c.parse_failures.to_string(),
            pct(c.accuracy()),
        ]);
    }
    rows.push(vec![
        "average".into(),
        r.total.to_string(),
        r.correct.to_string(),
        r.parse_failures.to_string(),
        pct(Some(r.average())),
    ]);
    csv_string(rows)
}

/// Two columns ready for a bar chart.
pub fn accuracy_plot_csv(r: &Report) -> String {
    let mut rows = vec![vec!["category".to_string(), "accuracy".to_string()]];
    rows.extend(r.categories.iter().map(|c| vec![c.category.name().to_string(), pct(c.accuracy())]));
    rows.push(vec!["average".into(), pct(Some(r.average()))]);
    csv_string(rows)
}

pub fn loss_csv(losses: &[LossEntry]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for l in losses {
        s.push_str(&l.csv_row());
        s.push('\n');
    }
    s
}

pub fn similarity_csv(rows: &[(String, Vec<TapSimilarity>)]) -> String {
    let mut s = String::from(SIMILARITY_CSV_HEADER);
    s.push('\n');
    for (id, table) in rows {
        for t in table {
            s.push_str(&spatialgeo_core::diagnostics::similarity_csv_row(id, t));
            s.push('\n');
        }
    }
    s
}

/// `kind,encoder_tap,mean_similarity` rows.
pub fn contrast_csv(groups: &[(&str, Vec<TapSimilarity>)]) -> String {
    let mut rows = vec![vec!["kind".to_string(), "encoder_tap".to_string(), "mean_similarity".to_string()]];
    for (kind, means) in groups {
        rows.extend(means.iter().map(|m| vec![kind.to_string(), m.tap.to_string(), format!("{:.6}", m.similarity)]));
    }
    csv_string(rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
