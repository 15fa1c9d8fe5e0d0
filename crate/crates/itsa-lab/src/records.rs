//! Shared metrics CSV: one observation per row.

use std::path::Path;

use itsa_core::Metric;

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 7] = ["run_id", "method", "seed", "epoch", "split", "metric", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricsRecord {
    pub fn from_metric(run_id: &str, method: &str, seed: u64, m: &Metric) -> Self {
        Self {
            run_id: run_id.to_string(),
            method: method.to_string(),
            seed,
            epoch: m.epoch,
            split: m.split.clone(),
            metric: m.name.clone(),
            value: m.value,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Csv { path: path.display().to_string(), reason: e.to_string() }
}

/// Writes `records` with the fixed header. Non-finite values are rejected
/// before anything is written.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if let Some(r) = records.iter().find(|r| !r.value.is_finite()) {
        return Err(HarnessError::Invariant(format!(
            "non-finite value {} for {}/{} at epoch {}",
            r.value, r.split, r.metric, r.epoch
        )));
    }
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.run_id.as_str(),
            r.method.as_str(),
            &r.seed.to_string(),
            &r.epoch.to_string(),
            r.split.as_str(),
            r.metric.as_str(),
            &r.value.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(HarnessError::Csv {
            path: path.display().to_string(),
            reason: format!("header {:?} differs from {}", header.iter().collect::<Vec<_>>(), CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| HarnessError::Csv { path: path.display().to_string(), reason: format!("row {}: bad {what}", i + 2) };
        out.push(MetricsRecord {
            run_id: row[0].to_string(),
            method: row[1].to_string(),
            seed: row[2].parse().map_err(|_| bad("seed"))?,
            epoch: row[3].parse().map_err(|_| bad("epoch"))?,
            split: row[4].to_string(),
            metric: row[5].to_string(),
            value: row[6].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(out)
}
