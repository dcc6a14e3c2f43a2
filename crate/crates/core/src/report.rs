//! Report rows and their CSV, Markdown and JSON renderings.
//!
//! Ratios in the CSV and Markdown tables are rounded half-up to two decimals;
//! the JSON summary keeps full precision.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{ClassReport, ConfusionMatrix, DetectionReport, MatchCounts};
use crate::postprocess::HelmetLabel;
use crate::prompts::Task;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no report rows to emit")]
    Empty,
    #[error("unknown report format {0:?} (expected csv, markdown or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowSource {
    Measured,
    Published,
}

impl RowSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RowSource::Measured => "measured",
            RowSource::Published => "published",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RowCounts {
    Confusion(ConfusionMatrix),
    Matches(MatchCounts),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: Task,
    pub class: Option<HelmetLabel>,
    pub pipeline: String,
    pub model: String,
    pub prompt_id: String,
    pub counts: Option<RowCounts>,
    pub ratios: Ratios,
    pub mean_latency_s: Option<f64>,
    pub source: RowSource,
}

impl ReportRow {
    pub fn classification(
        task: Task,
        pipeline: &str,
        model: &str,
        prompt_id: &str,
        cm: &ConfusionMatrix,
        report: &ClassReport,
    ) -> Self {
        ReportRow {
            task,
            class: None,
            pipeline: pipeline.into(),
            model: model.into(),
            prompt_id: prompt_id.into(),
            counts: Some(RowCounts::Confusion(*cm)),
            ratios: Ratios {
                precision: Some(report.precision),
                recall: Some(report.recall),
                f1: Some(report.f1),
                accuracy: Some(report.accuracy),
            },
            mean_latency_s: Some(report.mean_latency_s),
            source: RowSource::Measured,
        }
    }

    /// One row per helmet class.
    pub fn detection(pipeline: &str, model: &str, prompt_id: &str, report: &DetectionReport) -> Vec<Self> {
        report
            .classes
            .iter()
            .map(|c| ReportRow {
                task: Task::Helmet,
                class: Some(c.class),
                pipeline: pipeline.into(),
                model: model.into(),
                prompt_id: prompt_id.into(),
                counts: Some(RowCounts::Matches(c.counts)),
                ratios: Ratios { precision: Some(c.precision), recall: Some(c.recall), f1: Some(c.f1), accuracy: None },
                mean_latency_s: Some(report.mean_latency_s),
                source: RowSource::Measured,
            })
            .collect()
    }

    /// Compact line such as `BLIP, A2, 0.95, 0.92, 0.94, 0.49 sec`.
    pub fn line(&self) -> String {
        let mut parts = vec![self.model.clone()];
        if !self.prompt_id.is_empty() {
            parts.push(self.prompt_id.clone());
        }
        parts.push(fmt_ratio(self.ratios.precision));
        parts.push(fmt_ratio(self.ratios.recall));
        parts.push(fmt_ratio(self.ratios.f1));
        parts.push(fmt_seconds(self.mean_latency_s));
        let body = parts.join(", ");
        match self.class {
            Some(c) => format!("{c}: {body}"),
            None => body,
        }
    }
}

/// Round half away from zero at `places` decimals, treating values within
/// 1e-9 of the midpoint as the midpoint so that 0.935 rounds to 0.94.
pub fn round_half_up(x: f64, places: u32) -> f64 {
    let m = 10f64.powi(places as i32);
    let s = x.abs() * m;
    let f = s.floor();
    let r = if s - f >= 0.5 - 1e-9 { f + 1.0 } else { f };
    (r / m).copysign(x)
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", round_half_up(v, 2)))
}

fn fmt_seconds(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2} sec", round_half_up(v, 2)))
}

#[derive(Deserialize)]
struct PublishedEntry {
    task: Task,
    #[serde(default)]
    class: Option<HelmetLabel>,
    model: String,
    prompt_id: String,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    mean_latency_s: f64,
    baseline: bool,
}

static PUBLISHED: LazyLock<Vec<(bool, ReportRow)>> = LazyLock::new(|| {
    let entries: Vec<PublishedEntry> =
        serde_json::from_str(include_str!("../fixtures/reference_rows.json")).expect("reference rows parse");
    entries
        .into_iter()
        .map(|e| {
            let row = ReportRow {
                task: e.task,
                class: e.class,
                pipeline: if e.baseline { "baseline".into() } else { "vlm".into() },
                model: e.model,
                prompt_id: e.prompt_id,
                counts: None,
                ratios: Ratios { precision: e.precision, recall: e.recall, f1: e.f1, accuracy: None },
                mean_latency_s: Some(e.mean_latency_s),
                source: RowSource::Published,
            };
            (e.baseline, row)
        })
        .collect()
});

/// Published comparison rows for a task, in table order.
pub fn published_rows(task: Task) -> Vec<ReportRow> {
    PUBLISHED.iter().filter(|(_, r)| r.task == task).map(|(_, r)| r.clone()).collect()
}

/// Published rows of the task-specific supervised baselines only.
pub fn baseline_rows(task: Task) -> Vec<ReportRow> {
    PUBLISHED.iter().filter(|(b, r)| *b && r.task == task).map(|(_, r)| r.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(ReportError::UnknownFormat(s.into())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "markdown",
            ReportFormat::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 17] = [
    "task",
    "class",
    "pipeline",
    "model",
    "prompt_id",
    "tp",
    "fp",
    "fn",
    "tn",
    "unknown",
    "failed",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "mean_latency_s",
    "source",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_ratio(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", round_half_up(v, 2))).unwrap_or_default()
}

fn csv_record(row: &ReportRow) -> Vec<String> {
    let (tp, fp, fn_, tn, unknown, failed) = match row.counts {
        Some(RowCounts::Confusion(c)) => {
            (Some(c.tp), Some(c.fp), Some(c.fn_), Some(c.tn), Some(c.unknown), Some(c.failed))
        }
        Some(RowCounts::Matches(c)) => (Some(c.tp), Some(c.fp), Some(c.fn_), None, None, None),
        None => (None, None, None, None, None, None),
    };
    vec![
        row.task.to_string(),
        opt(row.class.map(|c| c.as_str())),
        row.pipeline.clone(),
        row.model.clone(),
        row.prompt_id.clone(),
        opt(tp),
        opt(fp),
        opt(fn_),
        opt(tn),
        opt(unknown),
        opt(failed),
        csv_ratio(row.ratios.precision),
        csv_ratio(row.ratios.recall),
        csv_ratio(row.ratios.f1),
        csv_ratio(row.ratios.accuracy),
        row.mean_latency_s.map(|v| format!("{v:.3}")).unwrap_or_default(),
        row.source.as_str().into(),
    ]
}

fn emit_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("write to memory");
    for row in rows {
        w.write_record(csv_record(row)).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 fields")
}

fn emit_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "| Task | Class | Model | Prompt used | Precision | Recall | F1-score | Accuracy | Inference time per image | Source |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let cells = [
            r.task.to_string(),
            r.class.map(|c| c.to_string()).unwrap_or_default(),
            r.model.replace('|', "\\|"),
            r.prompt_id.replace('|', "\\|"),
            fmt_ratio(r.ratios.precision),
            fmt_ratio(r.ratios.recall),
            fmt_ratio(r.ratios.f1),
            fmt_ratio(r.ratios.accuracy),
            fmt_seconds(r.mean_latency_s),
            r.source.as_str().into(),
        ];
        out.push_str("| ");
        out.push_str(&cells.join(" | "));
        out.push_str(" |\n");
    }
    out
}

pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(match format {
        ReportFormat::Csv => emit_csv(rows),
        ReportFormat::Markdown => emit_markdown(rows),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
            s.push('\n');
            s
        }
    })
}
