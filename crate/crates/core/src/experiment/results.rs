use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};

/// Per-trial CSV columns, in order.
pub const CSV_COLUMNS: [&str; 9] = [
    "scenario",
    "trial",
    "seed",
    "method",
    "param1",
    "param2",
    "predicted_err_pct",
    "realized_err_pct",
    "wall_ms",
];

/// NaN ⇄ `null`, since JSON has no NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One evaluated (trial, method, hyper-parameter) point.
///
/// `param1` is the swept quantity (λ, noise ratio, data length or ε) and
/// `param2` the secondary hyper-parameter, if any. Failed points carry NaN
/// errors and the failure message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub param1: Option<f64>,
    pub param2: Option<f64>,
    #[serde(with = "nan_as_null")]
    pub predicted_err_pct: f64,
    #[serde(with = "nan_as_null")]
    pub realized_err_pct: f64,
    pub wall_ms: f64,
    #[serde(with = "nan_as_null", default = "nan")]
    pub predicted_cost: f64,
    #[serde(with = "nan_as_null", default = "nan")]
    pub realized_cost: f64,
    #[serde(with = "nan_as_null", default = "nan")]
    pub optimal_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn nan() -> f64 {
    f64::NAN
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn same_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => same(a, b),
        (None, None) => true,
        _ => false,
    }
}

impl PartialEq for TrialResult {
    /// Bitwise on floats, with all NaNs equal.
    fn eq(&self, o: &Self) -> bool {
        self.scenario == o.scenario
            && self.trial == o.trial
            && self.seed == o.seed
            && self.method == o.method
            && same_opt(self.param1, o.param1)
            && same_opt(self.param2, o.param2)
            && same(self.predicted_err_pct, o.predicted_err_pct)
            && same(self.realized_err_pct, o.realized_err_pct)
            && same(self.wall_ms, o.wall_ms)
            && same(self.predicted_cost, o.predicted_cost)
            && same(self.realized_cost, o.realized_cost)
            && same(self.optimal_cost, o.optimal_cost)
            && self.error == o.error
    }
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Mean, median and quartiles (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub q1: f64,
    #[serde(with = "nan_as_null")]
    pub median: f64,
    #[serde(with = "nan_as_null")]
    pub q3: f64,
}

impl PartialEq for Summary {
    fn eq(&self, o: &Self) -> bool {
        same(self.mean, o.mean) && same(self.q1, o.q1) && same(self.median, o.median) && same(self.q3, o.q3)
    }
}

/// `p`-quantile of sorted data, interpolating linearly at position `(n−1)p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

impl Summary {
    /// Summary of the finite values; all NaN when there are none.
    pub fn of(values: &[f64]) -> Summary {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let mean = if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        Summary {
            mean,
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        }
    }
}

/// Statistics over trials for one (method, param1, param2) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub param1: Option<f64>,
    pub param2: Option<f64>,
    pub trials: usize,
    pub failures: usize,
    pub predicted_err_pct: Summary,
    pub realized_err_pct: Summary,
    pub realized_cost: Summary,
}

fn key_eq(r: &TrialResult, a: &AggregateRow) -> bool {
    r.method == a.method && same_opt(r.param1, a.param1) && same_opt(r.param2, a.param2)
}

/// Groups by (method, param1, param2) in order of first appearance.
pub fn aggregate(results: &[TrialResult]) -> Vec<AggregateRow> {
    let mut keys: Vec<AggregateRow> = Vec::new();
    let mut members: Vec<Vec<&TrialResult>> = Vec::new();
    for r in results {
        match keys.iter().position(|k| key_eq(r, k)) {
            Some(i) => members[i].push(r),
            None => {
                keys.push(AggregateRow {
                    method: r.method.clone(),
                    param1: r.param1,
                    param2: r.param2,
                    trials: 0,
                    failures: 0,
                    predicted_err_pct: Summary::of(&[]),
                    realized_err_pct: Summary::of(&[]),
                    realized_cost: Summary::of(&[]),
                });
                members.push(vec![r]);
            }
        }
    }
    for (row, group) in keys.iter_mut().zip(&members) {
        let col = |f: fn(&TrialResult) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
        row.trials = group.len();
        row.failures = group.iter().filter(|r| r.failed()).count();
        row.predicted_err_pct = Summary::of(&col(|r| r.predicted_err_pct));
        row.realized_err_pct = Summary::of(&col(|r| r.realized_err_pct));
        row.realized_cost = Summary::of(&col(|r| r.realized_cost));
    }
    keys
}

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ExperimentConfig,
    pub results: Vec<TrialResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl ScenarioReport {
    pub fn new(config: ExperimentConfig, results: Vec<TrialResult>) -> Self {
        let aggregates = aggregate(&results);
        ScenarioReport {
            config,
            results,
            aggregates,
        }
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.failed()).count()
    }

    /// Aggregate row for a method label and `param1`.
    pub fn row(&self, method: &str, param1: Option<f64>) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && same_opt(a.param1, param1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// The per-trial table: header row plus one row per result.
pub fn results_to_csv(results: &[TrialResult]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(CSV_COLUMNS)?;
    for r in results {
        wtr.write_record([
            r.scenario.clone(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.method.clone(),
            fmt_opt(r.param1),
            fmt_opt(r.param2),
            fmt_f64(r.predicted_err_pct),
            fmt_f64(r.realized_err_pct),
            fmt_f64(r.wall_ms),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

/// Reads a per-trial table written by [`results_to_csv`]. Columns that only
/// exist in JSON come back as NaN/`None`.
pub fn results_from_csv(text: &str) -> Result<Vec<TrialResult>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_int = |i: usize| rec[i].parse::<u64>().map_err(|e| Error::Parse(format!("{:?}: {e}", &rec[i])));
        out.push(TrialResult {
            scenario: rec[0].to_string(),
            trial: parse_int(1)? as usize,
            seed: parse_int(2)?,
            method: rec[3].to_string(),
            param1: parse_opt(&rec[4])?,
            param2: parse_opt(&rec[5])?,
            predicted_err_pct: parse_f64(&rec[6])?,
            realized_err_pct: parse_f64(&rec[7])?,
            wall_ms: parse_f64(&rec[8])?,
            predicted_cost: f64::NAN,
            realized_cost: f64::NAN,
            optimal_cost: f64::NAN,
            error: None,
        });
    }
    Ok(out)
}

pub fn aggregates_to_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "method",
        "param1",
        "param2",
        "trials",
        "failures",
        "predicted_mean",
        "predicted_q1",
        "predicted_median",
        "predicted_q3",
        "realized_mean",
        "realized_q1",
        "realized_median",
        "realized_q3",
    ])?;
    for a in rows {
        let (p, r) = (a.predicted_err_pct, a.realized_err_pct);
        let mut rec = vec![
            a.method.clone(),
            fmt_opt(a.param1),
            fmt_opt(a.param2),
            a.trials.to_string(),
            a.failures.to_string(),
        ];
        rec.extend([p.mean, p.q1, p.median, p.q3, r.mean, r.q1, r.median, r.q3].map(fmt_f64));
        wtr.write_record(rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report_to_json(report: &ScenarioReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn report_from_json(text: &str) -> Result<ScenarioReport> {
    Ok(serde_json::from_str(text)?)
}

/// Writes the per-trial results to `path` (`.csv` table or the full JSON report).
/// The output depends only on the report, so reruns are byte-identical.
pub fn emit_results(report: &ScenarioReport, format: OutputFormat, path: &Path) -> Result<()> {
    if report.results.is_empty() {
        return Err(Error::InvalidArgument("no results to write".into()));
    }
    let text = match format {
        OutputFormat::Csv => results_to_csv(&report.results)?,
        OutputFormat::Json => report_to_json(report)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
