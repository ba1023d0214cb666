//! Set-classification metrics, baselines and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub ber: f64,
    /// `1.5 − 2·BER`, unclipped.
    pub auc: f64,
    /// Set when `auc` leaves [0, 1], i.e. BER < 0.25 or BER > 0.75.
    pub auc_out_of_range: bool,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn metrics(c: ConfusionCounts) -> MetricReport {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let ber = 0.5 * (ratio(c.fp, c.tn + c.fp) + ratio(c.fn_, c.fn_ + c.tp));
    let auc = 1.5 - 2.0 * ber;
    MetricReport {
        counts: c,
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
        ber,
        auc,
        auc_out_of_range: !(0.0..=1.0).contains(&auc),
    }
}

pub fn evaluate(predictions: &[bool], truth: &[bool]) -> Result<MetricReport> {
    Ok(metrics(confusion(predictions, truth)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkResult {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub curve: Vec<(usize, f64)>,
}

impl TopkResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,f1\n");
        for (k, f) in &self.curve {
            let _ = writeln!(out, "{k},{f}");
        }
        out
    }
}

/// F1 of "top k positive, the rest negative" for every k in
/// `k_min..=min(k_max, n)`. `ranked_truth` holds the true labels of the
/// evaluated documents in ranking order.
pub fn topk_ir_baseline(ranked_truth: &[bool], k_min: usize, k_max: usize) -> Result<TopkResult> {
    let hi = k_max.min(ranked_truth.len());
    if k_min == 0 || k_min > hi {
        return Err(Error::InvalidInput(format!(
            "empty k range [{k_min}, {hi}]"
        )));
    }
    let positives = ranked_truth.iter().filter(|&&t| t).count() as f64;
    let mut tp = 0.0;
    let mut curve = Vec::with_capacity(hi - k_min + 1);
    for (i, &t) in ranked_truth[..hi].iter().enumerate() {
        if t {
            tp += 1.0;
        }
        let k = i + 1;
        if k >= k_min {
            // F1 = 2TP / (predicted + actual positives).
            let denom = k as f64 + positives;
            curve.push((k, if tp == 0.0 { 0.0 } else { 2.0 * tp / denom }));
        }
    }
    let n = curve.len() as f64;
    let mean = curve.iter().map(|c| c.1).sum::<f64>() / n;
    let var = curve.iter().map(|c| (c.1 - mean).powi(2)).sum::<f64>() / n;
    Ok(TopkResult {
        mean_f1: mean,
        std_f1: var.sqrt(),
        k_min,
        k_max: hi,
        curve,
    })
}

pub fn all_positive_baseline(truth: &[bool]) -> MetricReport {
    let preds = vec![true; truth.len()];
    evaluate(&preds, truth).expect("equal lengths")
}

/// Weighted mean of member scores; classify with `score > 0`.
pub fn ensemble(members: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if members.len() < 2 || weights.len() != members.len() {
        return Err(Error::InvalidInput(
            "an ensemble needs at least two members and one weight per member".into(),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput("weights must be non-negative and not all zero".into()));
    }
    let n = members[0].len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidInput("members scored different document sets".into()));
    }
    let total: f64 = weights.iter().sum();
    Ok((0..n)
        .map(|i| members.iter().zip(weights).map(|(m, w)| w * m[i]).sum::<f64>() / total)
        .collect())
}

/// `|a − b| / (a + b)` per grid point, 0 when both are 0.
pub fn scaling_curve(system: &[(usize, f64)], reference: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    if system.len() != reference.len() || system.iter().zip(reference).any(|(a, b)| a.0 != b.0) {
        return Err(Error::InvalidInput("|LP| grids do not align".into()));
    }
    Ok(system
        .iter()
        .zip(reference)
        .map(|(&(k, a), &(_, b))| (k, if a + b == 0.0 { 0.0 } else { (a - b).abs() / (a + b) }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub min: f64,
    pub width: f64,
    pub positive: Vec<u64>,
    pub negative: Vec<u64>,
}

impl ScoreHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start,bucket_end,positive,negative\n");
        for (i, (p, n)) in self.positive.iter().zip(&self.negative).enumerate() {
            let lo = self.min + self.width * i as f64;
            let _ = writeln!(out, "{lo},{},{p},{n}", lo + self.width);
        }
        out
    }
}

/// Equal-width buckets over `[min, max]` of the scores, counted per class.
pub fn score_histogram(scores: &[f64], truth: &[bool], buckets: usize) -> Result<ScoreHistogram> {
    if scores.is_empty() || buckets == 0 || scores.len() != truth.len() {
        return Err(Error::InvalidInput(
            "histogram needs scores, matching labels and at least one bucket".into(),
        ));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / buckets as f64;
    let mut h = ScoreHistogram {
        min,
        width,
        positive: vec![0; buckets],
        negative: vec![0; buckets],
    };
    for (&s, &t) in scores.iter().zip(truth) {
        let b = if width > 0.0 {
            (((s - min) / width) as usize).min(buckets - 1)
        } else {
            0
        };
        if t {
            h.positive[b] += 1;
        } else {
            h.negative[b] += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub method: String,
    pub topic: String,
    pub f1: f64,
}

/// Method × topic grid of F1 × 100 with two decimals and an average
/// column. Repeated (method, topic) entries, such as seeds, are averaged.
/// Rows keep first-appearance order; topics are sorted.
pub fn report_table(entries: &[ReportEntry], format: ReportFormat) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let topics: BTreeSet<&str> = entries.iter().map(|e| e.topic.as_str()).collect();
    let mut cells: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for e in entries {
        if !methods.contains(&e.method.as_str()) {
            methods.push(&e.method);
        }
        let c = cells.entry((&e.method, &e.topic)).or_default();
        c.0 += e.f1;
        c.1 += 1;
    }
    let mut header = vec!["method".to_string()];
    header.extend(topics.iter().map(|t| t.to_string()));
    header.push("avg".into());
    let mut rows = vec![header];
    for m in &methods {
        let mut row = vec![m.to_string()];
        let mut sum = 0.0;
        let mut present = 0;
        for t in &topics {
            match cells.get(&(*m, *t)) {
                Some(&(s, n)) => {
                    let v = 100.0 * s / n as f64;
                    sum += v;
                    present += 1;
                    row.push(format!("{v:.2}"));
                }
                None => row.push("-".into()),
            }
        }
        row.push(if present > 0 {
            format!("{:.2}", sum / present as f64)
        } else {
            "-".into()
        });
        rows.push(row);
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for r in rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let cols = rows[0].len();
            let widths: Vec<usize> = (0..cols)
                .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
                .collect();
            for r in rows {
                let line: Vec<String> = r
                    .iter()
                    .enumerate()
                    .map(|(c, v)| {
                        if c == 0 {
                            format!("{v:<w$}", w = widths[c])
                        } else {
                            format!("{v:>w$}", w = widths[c])
                        }
                    })
                    .collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
            }
        }
    }
    out
}
