use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MetricCell, ResultsTable, TableRow};
use crate::evaluator::{format_impact, format_mean_std, MeanStd, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected markdown, csv or json)")),
        }
    }
}

pub fn emit_report(table: &ResultsTable, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Markdown => markdown(table).into_bytes(),
        ReportFormat::Csv => csv_bytes(table),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(table).expect("table serializes");
            out.push(b'\n');
            out
        }
    }
}

const METRICS: [Metric; 3] = [Metric::Recall, Metric::Precision, Metric::F1];

fn md_cell(cell: &MetricCell) -> [String; 2] {
    [
        format_mean_std(&MeanStd {
            mean: cell.mean,
            stdev: cell.stdev,
        }),
        cell.impact.map_or_else(|| "n/a".to_string(), format_impact),
    ]
}

fn md_row(row: &TableRow) -> String {
    let mut cols = vec![
        row.name.replace('|', "\\|"),
        row.language.map_or_else(|| "-".to_string(), |l| l.to_string()),
    ];
    for m in METRICS {
        cols.extend(md_cell(row.cell(m)));
    }
    cols.push(row.shots.map_or_else(|| "-".to_string(), |s| s.to_string()));
    cols.push(row.excluded.to_string());
    cols.push(row.flags().join(", "));
    format!("| {} |", cols.join(" | "))
}

fn markdown(table: &ResultsTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {}\n", table.name);
    let _ = writeln!(
        out,
        "Scheme: {}. Impact relative to \"{}\".\n",
        table.scheme, table.reference_row
    );
    out.push_str("| name | lang | Recall | impact | Precision | impact | F1 | impact | shots | excluded | flags |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for row in table.all_rows() {
        out.push_str(&md_row(row));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    kind: &'a str,
    language: String,
    shots: String,
    pages: usize,
    excluded: usize,
    recall_mean: f64,
    recall_stdev: f64,
    recall_impact: String,
    precision_mean: f64,
    precision_stdev: f64,
    precision_impact: String,
    f1_mean: f64,
    f1_stdev: f64,
    f1_impact: String,
    micro_recall: f64,
    micro_precision: f64,
    micro_f1: f64,
    grounding_failures: usize,
    degenerate: bool,
    dropped: usize,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(table: &ResultsTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in table.all_rows() {
        w.serialize(CsvRow {
            name: &row.name,
            kind: match row.kind {
                super::RowKind::Prompt => "prompt",
                super::RowKind::Baseline => "baseline",
            },
            language: opt(row.language),
            shots: opt(row.shots),
            pages: row.pages,
            excluded: row.excluded,
            recall_mean: row.recall.mean,
            recall_stdev: row.recall.stdev,
            recall_impact: opt(row.recall.impact),
            precision_mean: row.precision.mean,
            precision_stdev: row.precision.stdev,
            precision_impact: opt(row.precision.impact),
            f1_mean: row.f1.mean,
            f1_stdev: row.f1.stdev,
            f1_impact: opt(row.f1.impact),
            micro_recall: row.micro.recall,
            micro_precision: row.micro.precision,
            micro_f1: row.micro.f1,
            grounding_failures: row.grounding_failures,
            degenerate: row.degenerate,
            dropped: row.dropped.values().sum(),
        })
        .expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{Metrics, Scheme};
    use crate::harness::RowKind;
    use crate::promptkit::Language;
    use std::collections::BTreeMap;

    fn row(name: &str, mean: f64, impact: Option<f64>) -> TableRow {
        let cell = MetricCell {
            mean,
            stdev: 0.0,
            impact,
        };
        TableRow {
            name: name.into(),
            kind: RowKind::Prompt,
            language: Some(Language::De),
            shots: Some(0),
            pages: 2,
            excluded: 0,
            recall: cell,
            precision: cell,
            f1: cell,
            micro: Metrics {
                precision: mean,
                recall: mean,
                f1: mean,
            },
            grounding_failures: 0,
            degenerate: false,
            dropped: BTreeMap::new(),
        }
    }

    fn table() -> ResultsTable {
        let mut baseline = row("Baseline flair", 0.81, Some(-100.0 / 3.0));
        baseline.kind = RowKind::Baseline;
        baseline.language = None;
        baseline.shots = None;
        ResultsTable {
            name: "fixture".into(),
            scheme: Scheme::EntType,
            reference_row: "Full".into(),
            rows: vec![row("Full", 1.0, Some(0.0)), row("Zero", 0.0, None)],
            footer: vec![baseline],
        }
    }

    #[test]
    fn markdown_rows() {
        let md = String::from_utf8(emit_report(&table(), ReportFormat::Markdown)).unwrap();
        assert!(md.contains("| Full | de | 1.00 ±0.00 | +0.00 % | 1.00 ±0.00 | +0.00 % | 1.00 ±0.00 | +0.00 % | 0 | 0 |  |"));
        assert!(md.contains("| Zero | de | 0.00 ±0.00 | n/a |"));
        assert!(md.contains("| Baseline flair | - | 0.81 ±0.00 | -33.33 % |"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 4);
    }

    #[test]
    fn csv_shape() {
        let csv = String::from_utf8(emit_report(&table(), ReportFormat::Csv)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("name,kind,language,shots"));
        assert!(lines[3].contains("-33.33333333333333"));
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let back: ResultsTable = serde_json::from_slice(&emit_report(&t, ReportFormat::Json)).unwrap();
        assert_eq!(back, t);
    }
}
