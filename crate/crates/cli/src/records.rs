//! Result rows and their CSV/JSON files.
//!
//! `records.csv` has one row per (setting, method, parameter, trial, target).
//! With model selection the parameter column holds the selected value. Blank
//! cells mean "not applicable" (for instance the expected counts outside the
//! orthogonal-rate experiment, or every metric of a failed trial).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Plan;

pub const RECORD_HEADER: [&str; 17] = [
    "experiment",
    "setting",
    "method",
    "param",
    "trial",
    "target",
    "status",
    "added",
    "missed",
    "l1_error",
    "l2_error",
    "support_size",
    "score",
    "iterations",
    "converged",
    "expected_added",
    "expected_missed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub setting: String,
    pub method: String,
    pub param: Option<f64>,
    pub trial: usize,
    pub target: String,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub added: Option<usize>,
    pub missed: Option<usize>,
    pub l1_error: Option<f64>,
    pub l2_error: Option<f64>,
    pub support_size: Option<usize>,
    /// Selection score of the chosen candidate.
    pub score: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub expected_added: Option<f64>,
    pub expected_missed: Option<f64>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const AGGREGATE_HEADER: [&str; 13] = [
    "experiment",
    "setting",
    "method",
    "param",
    "target",
    "metric",
    "count",
    "mean",
    "median",
    "q1",
    "q3",
    "min",
    "max",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub setting: String,
    pub method: String,
    pub param: Option<f64>,
    pub target: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub const AGREEMENT_HEADER: [&str; 7] = ["setting", "kappa", "sigma", "alpha", "trial", "agree", "sym_diff"];

/// Whether ARDvi(α) and MAP-STSBL(τ = (α−1)/2) chose the same support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub setting: String,
    pub kappa: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub trial: usize,
    pub agree: bool,
    /// Size of the symmetric difference of the two supports.
    pub sym_diff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub setting: String,
    pub trial: usize,
    pub method: String,
    pub seconds: f64,
}

const TIMING_HEADER: [&str; 4] = ["setting", "trial", "method", "seconds"];

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub plan: Plan,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub agreement: Vec<AgreementRow>,
    pub timings: Vec<TimingRow>,
}

impl ResultBundle {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(values: &mut [f64]) -> (f64, f64, f64, f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75), values[0], values[values.len() - 1])
}

type MetricFn = fn(&TrialRecord) -> Option<f64>;

const METRICS: [(&str, MetricFn); 7] = [
    ("added", |r| r.added.map(|v| v as f64)),
    ("missed", |r| r.missed.map(|v| v as f64)),
    ("l1_error", |r| r.l1_error),
    ("l2_error", |r| r.l2_error),
    ("support_size", |r| r.support_size.map(|v| v as f64)),
    ("expected_added", |r| r.expected_added),
    ("expected_missed", |r| r.expected_missed),
];

/// Per (setting, method, parameter, target) statistics over trials, for
/// every metric that has at least one value. Records whose target starts
/// with `x` are additionally pooled under the target `dims`. `by_param`
/// keeps parameters apart; otherwise they are pooled and left blank.
pub fn aggregate(records: &[TrialRecord], by_param: bool) -> Vec<AggregateRow> {
    // Keys: ordinal of first appearance keeps the output in record order.
    let mut groups: BTreeMap<usize, (Vec<&TrialRecord>, (String, String, Option<f64>, String))> = BTreeMap::new();
    let mut index: BTreeMap<(String, String, String, String), usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let param = if by_param { r.param } else { None };
        let param_key = param.map(|p| format!("{p:e}")).unwrap_or_default();
        let mut targets = vec![r.target.clone()];
        if r.target.starts_with('x') && r.target[1..].parse::<usize>().is_ok() {
            targets.push("dims".to_string());
        }
        for target in targets {
            let key = (r.setting.clone(), r.method.clone(), param_key.clone(), target.clone());
            let next = index.len();
            let ordinal = *index.entry(key).or_insert(next);
            groups
                .entry(ordinal)
                .or_insert_with(|| (Vec::new(), (r.setting.clone(), r.method.clone(), param, target)))
                .0
                .push(r);
        }
    }
    let mut rows = Vec::new();
    for (members, (setting, method, param, target)) in groups.into_values() {
        for (metric, get) in METRICS {
            let mut values: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, median, q1, q3, min, max) = summarize(&mut values);
            rows.push(AggregateRow {
                experiment: members[0].experiment.clone(),
                setting: setting.clone(),
                method: method.clone(),
                param,
                target: target.clone(),
                metric: metric.to_string(),
                count: values.len(),
                mean,
                median,
                q1,
                q3,
                min,
                max,
            });
        }
    }
    rows
}

fn write_csv<S: Serialize>(path: &Path, header: &[&str], rows: &[S]) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<D>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(io::Error::other)).collect()
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> io::Result<()> {
    write_csv(path, &RECORD_HEADER, records)
}

pub fn read_records(path: &Path) -> io::Result<Vec<TrialRecord>> {
    read_csv(path)
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRow]) -> io::Result<()> {
    write_csv(path, &AGGREGATE_HEADER, rows)
}

pub fn read_aggregates(path: &Path) -> io::Result<Vec<AggregateRow>> {
    read_csv(path)
}

pub fn read_agreement(path: &Path) -> io::Result<Vec<AgreementRow>> {
    read_csv(path)
}

/// Writes `records.csv`, `aggregates.csv` and `meta.json` into `dir`, plus
/// `agreement.csv` for condition sweeps and `timings.csv` on request.
/// Everything except `timings.csv` is a pure function of the config.
pub fn emit_results(bundle: &ResultBundle, dir: &Path, with_timings: bool) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_records(&dir.join("records.csv"), &bundle.records)?;
    write_aggregates(&dir.join("aggregates.csv"), &bundle.aggregates)?;
    if bundle.plan.experiment == crate::config::ExperimentKind::CondSweep {
        write_csv(&dir.join("agreement.csv"), &AGREEMENT_HEADER, &bundle.agreement)?;
    }
    if with_timings {
        write_csv(&dir.join("timings.csv"), &TIMING_HEADER, &bundle.timings)?;
    }
    let meta = serde_json::json!({
        "toolkit": "sparse-ard",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": bundle.plan.seed,
        "config": bundle.plan,
    });
    let mut text = serde_json::to_string_pretty(&meta).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(dir.join("meta.json"), text)
}
