//! CSV reports: one row per epoch per run, plus cross-run summaries.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::train::EpochStats;

/// Stable column set; RFC-4180 quoting is handled by the csv writer.
pub const CSV_HEADER: [&str; 11] = [
    "experiment_id",
    "seed",
    "epoch",
    "phase",
    "train_loss",
    "val_accuracy",
    "beta",
    "lr",
    "pruned_fraction_per_layer",
    "mask_agreement_per_layer",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub beta: f64,
    pub lr: f64,
    /// `name=value` pairs joined by ';', one per pruned layer.
    pub pruned_fraction_per_layer: String,
    pub mask_agreement_per_layer: String,
    pub wall_time_s: f64,
}

fn join_layer_values(pairs: impl Iterator<Item = (String, f64)>) -> String {
    pairs
        .map(|(name, v)| format!("{name}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn rows_from_history(id: &str, seed: u64, history: &[EpochStats]) -> Vec<ReportRow> {
    history
        .iter()
        .map(|e| ReportRow {
            experiment_id: id.to_string(),
            seed,
            epoch: e.epoch,
            phase: e.phase.clone(),
            train_loss: e.train_loss,
            val_accuracy: e.val_accuracy,
            beta: e.beta,
            lr: e.lr,
            pruned_fraction_per_layer: join_layer_values(
                e.layers
                    .iter()
                    .map(|l| (l.layer.clone(), l.pruned_fraction)),
            ),
            mask_agreement_per_layer: join_layer_values(
                e.layers
                    .iter()
                    .map(|l| (l.layer.clone(), l.agreement_with_cvg)),
            ),
            wall_time_s: e.wall_time_s,
        })
        .collect()
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.experiment_id.as_str(),
            &row.seed.to_string(),
            &row.epoch.to_string(),
            &row.phase,
            &row.train_loss.to_string(),
            &row.val_accuracy.to_string(),
            &row.beta.to_string(),
            &row.lr.to_string(),
            &row.pruned_fraction_per_layer,
            &row.mask_agreement_per_layer,
            &row.wall_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    {
        let headers = r.headers()?;
        if headers.len() != CSV_HEADER.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: expected {} columns, found {}",
                path.as_ref().display(),
                CSV_HEADER.len(),
                headers.len()
            )));
        }
    }
    let parse = |field: &str, what: &str| -> Result<f64> {
        field
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad {what} value '{field}'")))
    };
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push(ReportRow {
            experiment_id: record[0].to_string(),
            seed: record[1]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad seed '{}'", &record[1])))?,
            epoch: record[2]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad epoch '{}'", &record[2])))?,
            phase: record[3].to_string(),
            train_loss: parse(&record[4], "train_loss")?,
            val_accuracy: parse(&record[5], "val_accuracy")?,
            beta: parse(&record[6], "beta")?,
            lr: parse(&record[7], "lr")?,
            pruned_fraction_per_layer: record[8].to_string(),
            mask_agreement_per_layer: record[9].to_string(),
            wall_time_s: parse(&record[10], "wall_time_s")?,
        });
    }
    Ok(rows)
}

/// Mean of the `name=value` pairs in a per-layer field; zero when empty.
pub fn mean_layer_value(field: &str) -> f64 {
    let values: Vec<f64> = field
        .split(';')
        .filter(|s| !s.is_empty())
        .filter_map(|pair| pair.split_once('=').and_then(|(_, v)| v.parse().ok()))
        .collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub runs: usize,
    pub mean_final_accuracy: f64,
    pub min_final_accuracy: f64,
    pub max_final_accuracy: f64,
    pub mean_final_pruned_fraction: f64,
}

/// Aggregate the `final` rows of many runs by experiment id.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.phase == "final") {
        groups.entry(&row.experiment_id).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(id, rows)| {
            let accs: Vec<f64> = rows.iter().map(|r| r.val_accuracy).collect();
            let fractions: Vec<f64> = rows
                .iter()
                .map(|r| mean_layer_value(&r.pruned_fraction_per_layer))
                .collect();
            SummaryRow {
                experiment_id: id.to_string(),
                runs: rows.len(),
                mean_final_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
                min_final_accuracy: accs.iter().cloned().fold(f64::INFINITY, f64::min),
                max_final_accuracy: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean_final_pruned_fraction: fractions.iter().sum::<f64>() / fractions.len() as f64,
            }
        })
        .collect()
}

pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "experiment_id",
        "runs",
        "mean_final_accuracy",
        "min_final_accuracy",
        "max_final_accuracy",
        "mean_final_pruned_fraction",
    ])?;
    for row in rows {
        w.write_record([
            row.experiment_id.as_str(),
            &row.runs.to_string(),
            &row.mean_final_accuracy.to_string(),
            &row.min_final_accuracy.to_string(),
            &row.max_final_accuracy.to_string(),
            &row.mean_final_pruned_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
