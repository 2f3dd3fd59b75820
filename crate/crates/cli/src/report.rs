//! Time and metrics CSV files, one row per round.

use std::path::Path;

use flaps_core::orchestrator::{Mode, RoundResult};

use crate::CliError;

pub const TIME_HEADER: [&str; 8] = ["mode", "k", "seed", "t1", "t2", "t3", "t4", "total"];
pub const METRICS_HEADER: [&str; 7] = ["mode", "k", "seed", "loss", "auc", "fscore", "accuracy"];

#[derive(Debug, Clone, PartialEq)]
pub struct TimeRow {
    pub mode: Mode,
    pub k: Option<usize>,
    pub seed: u64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub total: f64,
}

impl From<&RoundResult> for TimeRow {
    fn from(r: &RoundResult) -> Self {
        let t = r.timing;
        Self {
            mode: r.mode,
            k: r.k,
            seed: r.seed,
            t1: t.t1,
            t2: t.t2,
            t3: t.t3,
            t4: t.t4,
            total: t.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: Mode,
    pub k: Option<usize>,
    pub seed: u64,
    pub loss: f64,
    pub auc: f64,
    pub fscore: f64,
    pub accuracy: f64,
}

impl From<&RoundResult> for MetricsRow {
    fn from(r: &RoundResult) -> Self {
        let m = r.metrics;
        Self {
            mode: r.mode,
            k: r.k,
            seed: r.seed,
            loss: m.loss,
            auc: m.auc,
            fscore: m.fscore,
            accuracy: m.accuracy,
        }
    }
}

fn key_fields(mode: Mode, k: Option<usize>, seed: u64) -> Vec<String> {
    vec![
        mode.to_string(),
        k.map_or_else(|| "NA".to_string(), |k| k.to_string()),
        seed.to_string(),
    ]
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let mut n = 0;
    for row in rows {
        w.write_record(&row)?;
        n += 1;
    }
    if n == 0 {
        return Err(CliError::EmptyResults);
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn floats(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| format!("{v:.6}"))
}

pub fn write_time_csv(results: &[RoundResult], path: impl AsRef<Path>) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(CliError::EmptyResults);
    }
    write_rows(
        path.as_ref(),
        &TIME_HEADER,
        results.iter().map(TimeRow::from).map(|r| {
            let mut f = key_fields(r.mode, r.k, r.seed);
            f.extend(floats(&[r.t1, r.t2, r.t3, r.t4, r.total]));
            f
        }),
    )
}

pub fn write_metrics_csv(results: &[RoundResult], path: impl AsRef<Path>) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(CliError::EmptyResults);
    }
    write_rows(
        path.as_ref(),
        &METRICS_HEADER,
        results.iter().map(MetricsRow::from).map(|r| {
            let mut f = key_fields(r.mode, r.k, r.seed);
            f.extend(floats(&[r.loss, r.auc, r.fscore, r.accuracy]));
            f
        }),
    )
}

struct Parsed {
    mode: Mode,
    k: Option<usize>,
    seed: u64,
    values: Vec<f64>,
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Parsed>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if found != header {
        return Err(CliError::BadCsv(format!(
            "header {found:?}, expected {header:?}"
        )));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |what: &str| CliError::BadCsv(format!("row {}: bad {what}", line + 1));
        let mode = record[0].parse::<Mode>().map_err(|_| bad("mode"))?;
        let k = match &record[1] {
            "NA" => None,
            k => Some(k.parse().map_err(|_| bad("k"))?),
        };
        let seed = record[2].parse().map_err(|_| bad("seed"))?;
        let values = record
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| bad("number")))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Parsed {
            mode,
            k,
            seed,
            values,
        });
    }
    Ok(out)
}

pub fn read_time_csv(path: impl AsRef<Path>) -> Result<Vec<TimeRow>, CliError> {
    Ok(read_rows(path.as_ref(), &TIME_HEADER)?
        .into_iter()
        .map(|p| TimeRow {
            mode: p.mode,
            k: p.k,
            seed: p.seed,
            t1: p.values[0],
            t2: p.values[1],
            t3: p.values[2],
            t4: p.values[3],
            total: p.values[4],
        })
        .collect())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, CliError> {
    Ok(read_rows(path.as_ref(), &METRICS_HEADER)?
        .into_iter()
        .map(|p| MetricsRow {
            mode: p.mode,
            k: p.k,
            seed: p.seed,
            loss: p.values[0],
            auc: p.values[1],
            fscore: p.values[2],
            accuracy: p.values[3],
        })
        .collect())
}
