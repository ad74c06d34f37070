//! Top-1 accuracy, multi-seed aggregation and report documents.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::store::{check_aligned, LabelVector};
use crate::zeroshot::ProbabilityMatrix;

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn top1_accuracy(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<f64> {
    check_aligned("evaluation", probs.num_items(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let correct = probs
        .argmax()
        .iter()
        .zip(labels.as_slice())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One (method, shots, seed) evaluation on the full test split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dataset: String,
    pub method: String,
    /// 0 for methods that see no labeled examples.
    pub shots: usize,
    pub seed: u64,
    pub top1: f64,
    pub lambda_used: Option<f64>,
}

pub const RESULTS_HEADER: &str = "dataset,method,shots,seed,top1,lambda";
pub const REPORT_HEADER: &str = "dataset,method,shots,seed_count,mean_top1,std_top1,lambda";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One line per run, sorted by (dataset, method, shots, seed).
pub fn results_to_csv(results: &[RunResult]) -> String {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| (&a.dataset, &a.method, a.shots, a.seed).cmp(&(&b.dataset, &b.method, b.shots, b.seed)));
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.dataset,
            r.method,
            r.shots,
            r.seed,
            r.top1,
            fmt_opt(r.lambda_used)
        ));
    }
    out
}

/// Parses the output of [`results_to_csv`].
pub fn results_from_csv(text: &str) -> Result<Vec<RunResult>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("results csv: {e}")))?;
    if headers.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::InvalidInput(format!(
            "results csv header must be {RESULTS_HEADER:?}"
        )));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidInput(format!("results csv: {e}")))?;
        let bad = |what: &str| Error::InvalidInput(format!("results csv row {}: bad {what}", line + 1));
        let top1: f64 = record[4].parse().map_err(|_| bad("top1"))?;
        if !(0.0..=1.0).contains(&top1) {
            return Err(bad("top1"));
        }
        out.push(RunResult {
            dataset: record[0].to_string(),
            method: record[1].to_string(),
            shots: record[2].parse().map_err(|_| bad("shots"))?,
            seed: record[3].parse().map_err(|_| bad("seed"))?,
            top1,
            lambda_used: match &record[5] {
                "" => None,
                v => Some(v.parse().map_err(|_| bad("lambda"))?),
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub dataset: String,
    pub method: String,
    pub shots: usize,
    pub num_runs: usize,
    pub mean_top1: f64,
    /// Population standard deviation.
    pub std_top1: f64,
    /// Mean blending weight over runs that used one.
    pub mean_lambda: Option<f64>,
}

/// Mean and population std of one group of runs.
pub fn aggregate_group(group: &[RunResult]) -> Result<AggregateResult> {
    let first = group.first().ok_or(Error::EmptyInput("run group"))?;
    let n = group.len() as f64;
    let mean = group.iter().map(|r| r.top1).sum::<f64>() / n;
    let (lo, hi) = group.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.top1), hi.max(r.top1))
    });
    let mean = mean.clamp(lo, hi);
    let var = group.iter().map(|r| (r.top1 - mean).powi(2)).sum::<f64>() / n;
    let lambdas: Vec<f64> = group.iter().filter_map(|r| r.lambda_used).collect();
    Ok(AggregateResult {
        dataset: first.dataset.clone(),
        method: first.method.clone(),
        shots: first.shots,
        num_runs: group.len(),
        mean_top1: mean,
        std_top1: var.sqrt(),
        mean_lambda: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
    })
}

/// Groups by (dataset, method, shots), in that sort order.
pub fn aggregate_runs(results: &[RunResult]) -> Vec<AggregateResult> {
    let mut groups: BTreeMap<(&str, &str, usize), Vec<RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((&r.dataset, &r.method, r.shots))
            .or_default()
            .push(r.clone());
    }
    groups
        .values()
        .map(|g| aggregate_group(g).expect("groups are nonempty"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "markdown",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn emit_report(aggregates: &[AggregateResult], format: ReportFormat) -> String {
    let cells = |a: &AggregateResult| {
        [
            a.dataset.clone(),
            a.method.clone(),
            a.shots.to_string(),
            a.num_runs.to_string(),
            format!("{:.6}", a.mean_top1),
            format!("{:.6}", a.std_top1),
            fmt_opt(a.mean_lambda),
        ]
    };
    match format {
        ReportFormat::Csv => {
            let mut out = format!("{REPORT_HEADER}\n");
            for a in aggregates {
                out.push_str(&cells(a).join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Markdown => {
            let columns: Vec<&str> = REPORT_HEADER.split(',').collect();
            let mut out = format!("| {} |\n|{}\n", columns.join(" | "), "---|".repeat(columns.len()));
            for a in aggregates {
                out.push_str(&format!("| {} |\n", cells(a).join(" | ")));
            }
            out
        }
    }
}
