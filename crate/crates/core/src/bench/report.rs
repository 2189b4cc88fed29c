use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ReportFormat;
use super::BenchError;
use crate::metrics::{compute_metrics, fraction4, percent, ConfusionMatrix, Metric, MetricsReport};

/// One model's column of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    /// `logreg` … `gboost`, `cnn-train`, `cnn-test`.
    pub key: String,
    pub title: String,
    /// The spec the model was fitted with, `kind(params)`.
    pub spec: Option<String>,
    pub confusion: Option<ConfusionMatrix>,
    pub error: Option<String>,
    pub wall_seconds: Option<f64>,
}

impl Column {
    pub fn metrics(&self) -> Option<MetricsReport> {
        self.confusion.as_ref().and_then(|c| compute_metrics(c).ok())
    }

    fn cell(&self, m: Metric, fmt: impl Fn(crate::metrics::Rate) -> String) -> String {
        match self.metrics() {
            Some(r) => r.rate(m).map_or_else(|| "n/a".to_string(), fmt),
            None => "failed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub cnn_seed: Option<u64>,
    pub config_hash: String,
    pub feature_rows: Option<usize>,
    pub test_rows: Option<usize>,
    pub images: Option<usize>,
    pub reproducible: bool,
    pub version: String,
}

/// The five metrics (rows) for every model run (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<Column>,
    pub provenance: Provenance,
}

impl ComparisonTable {
    pub fn column(&self, key: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.key == key)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    fn show_times(&self) -> bool {
        !self.provenance.reproducible
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Classifier comparison\n\n");
        let titles: Vec<&str> = self.columns.iter().map(|c| c.title.as_str()).collect();
        let table = |s: &mut String, fmt: &dyn Fn(crate::metrics::Rate) -> String| {
            let _ = writeln!(s, "| Metric | {} |", titles.join(" | "));
            let _ = writeln!(s, "|:--|{}", "--:|".repeat(titles.len()));
            for m in Metric::ALL {
                let cells: Vec<String> = self.columns.iter().map(|c| c.cell(m, fmt)).collect();
                let _ = writeln!(s, "| {} | {} |", m.title(), cells.join(" | "));
            }
        };
        table(&mut s, &|r| percent(r).to_string());
        s.push_str(
            "\nWhole percents, rounded half away from zero. Classical models and \
             CNN (test) are scored on the held-out test split; CNN (train) on the \
             training split.\n\n## Fractions\n\n",
        );
        table(&mut s, &|r| format!("{:.4}", fraction4(r)));
        let p = &self.provenance;
        s.push_str("\n## Provenance\n\n");
        let _ = writeln!(s, "- seed: {}", p.seed);
        if let Some(c) = p.cnn_seed {
            let _ = writeln!(s, "- cnn seed: {c}");
        }
        let _ = writeln!(s, "- config hash: {}", p.config_hash);
        if let Some(n) = p.feature_rows {
            let _ = writeln!(s, "- feature rows: {n}");
        }
        if let Some(n) = p.test_rows {
            let _ = writeln!(s, "- test rows: {n}");
        }
        if let Some(n) = p.images {
            let _ = writeln!(s, "- images: {n}");
        }
        let _ = writeln!(s, "- version: {}", p.version);
        s.push_str("\n| Model | Spec |");
        if self.show_times() {
            s.push_str(" Wall time (s) |");
        }
        s.push_str("\n|:--|:--|");
        if self.show_times() {
            s.push_str("--:|");
        }
        s.push('\n');
        for c in &self.columns {
            let _ = write!(s, "| {} | {} |", c.title, c.spec.as_deref().unwrap_or("-"));
            if self.show_times() {
                let t = c.wall_seconds.map_or_else(|| "-".into(), |t| format!("{t:.3}"));
                let _ = write!(s, " {t} |");
            }
            s.push('\n');
        }
        let failures: Vec<&Column> = self.columns.iter().filter(|c| c.error.is_some()).collect();
        if !failures.is_empty() {
            s.push_str("\n## Failures\n\n");
            for c in failures {
                let _ = writeln!(s, "- {}: {}", c.title, c.error.as_deref().unwrap_or_default());
            }
        }
        s
    }

    /// One metric per row: `<key>_percent` and `<key>_fraction` per model.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        for c in &self.columns {
            header.push(format!("{}_percent", c.key));
            header.push(format!("{}_fraction", c.key));
        }
        w.write_record(&header).expect("in-memory csv");
        for m in Metric::ALL {
            let mut row = vec![m.key().to_string()];
            for c in &self.columns {
                row.push(c.cell(m, |r| percent(r).to_string()));
                row.push(c.cell(m, |r| format!("{:.4}", fraction4(r))));
            }
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// The table itself plus each column's derived metrics record.
    pub fn to_json(&self) -> String {
        let mut table = self.clone();
        if !self.show_times() {
            table.columns.iter_mut().for_each(|c| c.wall_seconds = None);
        }
        let mut value = serde_json::to_value(&table).expect("table serializes");
        if let Some(cols) = value["columns"].as_array_mut() {
            for (v, c) in cols.iter_mut().zip(&self.columns) {
                v["metrics"] = c
                    .metrics()
                    .map_or(serde_json::Value::Null, |m| serde_json::Value::Object(m.to_record()));
            }
        }
        let mut s = serde_json::to_string_pretty(&value).expect("json");
        s.push('\n');
        s
    }

    /// Reads back a table written by [`ComparisonTable::to_json`].
    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(s)?)
    }
}
