use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::EntityMetrics;
use crate::error::{Error, Result};

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        if values.iter().all(|&v| v == values[0]) {
            return MeanStd { mean: values[0], std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// Percent with two decimals, e.g. `30.40±4.89`.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn aggregate_runs(runs: &[EntityMetrics]) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::Empty("runs to aggregate"));
    }
    let col = |f: fn(&EntityMetrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(Summary {
        runs: runs.len(),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
    })
}

/// Outcome of one seed; failed cells keep their error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EntityMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-seed results and their summary for one `(k, variant)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub label_set: String,
    pub variant: String,
    pub k: usize,
    pub runs: Vec<SeedRun>,
    /// Over successful runs; absent when every run failed.
    pub summary: Option<Summary>,
}

impl RunReport {
    pub fn new(dataset: &str, label_set: &str, variant: &str, k: usize, runs: Vec<SeedRun>) -> Self {
        let ok: Vec<EntityMetrics> = runs.iter().filter_map(|r| r.metrics).collect();
        RunReport {
            dataset: dataset.into(),
            label_set: label_set.into(),
            variant: variant.into(),
            k,
            summary: aggregate_runs(&ok).ok(),
            runs,
        }
    }
}

fn cells(r: &RunReport) -> [String; 3] {
    match &r.summary {
        Some(s) => [s.precision.percent(), s.recall.percent(), s.f1.percent()],
        None => ["failed".into(), "failed".into(), "failed".into()],
    }
}

/// Aligned table with columns k, variant, P, R, F1 (percent, mean±std).
pub fn render_text(reports: &[RunReport]) -> String {
    let header = ["k".to_string(), "variant".into(), "P".into(), "R".into(), "F1".into()];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let [p, rc, f] = cells(r);
            [r.k.to_string(), r.variant.clone(), p, rc, f]
        })
        .collect();
    let mut width = header.clone().map(|h| h.chars().count());
    for row in &rows {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = row
            .iter()
            .zip(&width)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    out
}

/// CSV with percent means and standard deviations.
pub fn render_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("k,variant,label_set,runs,precision,precision_std,recall,recall_std,f1,f1_std\n");
    for r in reports {
        let s = r.summary.unwrap_or_default();
        let pct = |m: MeanStd| format!("{:.2},{:.2}", 100.0 * m.mean, 100.0 * m.std);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            r.variant,
            r.label_set,
            s.runs,
            pct(s.precision),
            pct(s.recall),
            pct(s.f1)
        )
        .unwrap();
    }
    out
}
