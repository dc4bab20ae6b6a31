//! Compression metrics over per-epoch estimate series, plus the artifact
//! writers for them.
//!
//! For a series `v_1..v_T` of degrees-of-freedom or rank values:
//!
//! - compression value at epoch t: `CV_t = v_1 - v_t` (positive when the
//!   layer has compressed relative to the first epoch), and
//! - memorization-compression ratio at epoch t, in percent:
//!   `MCR_t = 100 * (v_t - min(v)) / min(v)`, undefined when the series
//!   minimum is zero.
//!
//! `MCR` here uses the whole-series minimum, which is only known once the
//! run finishes. `streaming_mcr` is the running-minimum variant for live
//! monitoring; its trailing value agrees with the final `MCR_T`.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dof,
    Rank,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Dof => "dof",
            MetricKind::Rank => "rank",
        }
    }
}

/// Per-epoch values of one metric on one layer, epochs 1..=T.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricSeries {
    pub layer: String,
    pub kind: MetricKind,
    pub values: Vec<i64>,
}

fn check_nonempty(values: &[i64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("metric series must be non-empty".to_string()));
    }
    Ok(())
}

/// Compression values: `CV_t = v_1 - v_t`. `CV_1` is always 0; later
/// entries are negative when the series rises above its start.
pub fn compute_cv(values: &[i64]) -> Result<Vec<i64>> {
    check_nonempty(values)?;
    let first = values[0];
    Ok(values.iter().map(|v| first - v).collect())
}

/// Memorization-compression ratios in percent, or `None` when the series
/// minimum is zero and the ratio is undefined.
pub fn compute_mcr(values: &[i64]) -> Result<Option<Vec<f64>>> {
    check_nonempty(values)?;
    let min = *values.iter().min().unwrap();
    if min <= 0 {
        return Ok(None);
    }
    Ok(Some(
        values
            .iter()
            .map(|v| 100.0 * (v - min) as f64 / min as f64)
            .collect(),
    ))
}

/// Running-minimum variant of `compute_mcr` for mid-run monitoring: entry t
/// uses `min(v_1..v_t)`, so early entries can overestimate the final ratio.
/// Entries are `None` while the running minimum is zero.
pub fn streaming_mcr(values: &[i64]) -> Result<Vec<Option<f64>>> {
    check_nonempty(values)?;
    let mut min = i64::MAX;
    Ok(values
        .iter()
        .map(|&v| {
            min = min.min(v);
            if min <= 0 {
                None
            } else {
                Some(100.0 * (v - min) as f64 / min as f64)
            }
        })
        .collect())
}

/// Table row for one (layer, metric) pair over a finished run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LayerSummary {
    pub layer_id: String,
    pub kind: MetricKind,
    /// Trainable parameters of the layer.
    pub parameter_amount: usize,
    /// Peak compression over the run.
    pub max_cv: i64,
    /// How far compression receded from its peak by the final epoch.
    pub max_cv_minus_final: i64,
    /// Final-epoch memorization-compression ratio; `None` when undefined.
    pub final_mcr_percent: Option<f64>,
    /// Membership attack accuracy in percent, when an attack ran.
    pub attack_accuracy_percent: Option<f64>,
}

/// Summarize one completed series. The series must cover exactly
/// `expected_epochs` entries.
pub fn summarize(
    series: &MetricSeries,
    params: usize,
    attack_accuracy_percent: Option<f64>,
    expected_epochs: usize,
) -> Result<LayerSummary> {
    if series.values.len() != expected_epochs {
        return Err(Error::contract(format!(
            "series for {} ({}) has {} epochs, run expects {}",
            series.layer,
            series.kind.as_str(),
            series.values.len(),
            expected_epochs
        )));
    }
    let cv = compute_cv(&series.values)?;
    let mcr = compute_mcr(&series.values)?;
    let max_cv = *cv.iter().max().unwrap();
    Ok(LayerSummary {
        layer_id: series.layer.clone(),
        kind: series.kind,
        parameter_amount: params,
        max_cv,
        max_cv_minus_final: max_cv - *cv.last().unwrap(),
        final_mcr_percent: mcr.map(|m| *m.last().unwrap()),
        attack_accuracy_percent,
    })
}

/// "max (recession)" table cell, e.g. `24 (9)`.
pub fn format_cv(max_cv: i64, max_cv_minus_final: i64) -> String {
    format!("{} ({})", max_cv, max_cv_minus_final)
}

/// Percent cell with two decimals, e.g. `27.27%`; an em-dash-free `n/a`
/// marker when undefined.
pub fn format_mcr(mcr: Option<f64>) -> String {
    match mcr {
        Some(v) => format!("{:.2}%", v),
        None => "n/a".to_string(),
    }
}

/// Write the per-epoch metric table. One row per (epoch, series), columns
/// `epoch,layer,kind,value,cv,mcr_percent`, LF line endings, `NA` for
/// undefined ratios.
pub fn write_metrics_csv(path: &Path, series: &[MetricSeries]) -> Result<()> {
    let mut out = String::from("epoch,layer,kind,value,cv,mcr_percent\n");
    for s in series {
        let cv = compute_cv(&s.values)?;
        let mcr = compute_mcr(&s.values)?;
        for (t, &v) in s.values.iter().enumerate() {
            let mcr_cell = match &mcr {
                Some(m) => format!("{:.2}", m[t]),
                None => "NA".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t + 1,
                s.layer,
                s.kind.as_str(),
                v,
                cv[t],
                mcr_cell
            ));
        }
    }
    crate::write_atomic(path, out.as_bytes())
}

/// Write summary rows as a JSON array, stable field order, two-space
/// indentation.
pub fn write_summary_json(path: &Path, rows: &[LayerSummary]) -> Result<()> {
    let json = serde_json::to_string_pretty(rows)
        .map_err(|e| Error::numerical(format!("summary serialization failed: {}", e)))?;
    let mut bytes = json.into_bytes();
    bytes.push(b'\n');
    crate::write_atomic(path, &bytes)
}

/// Read a metrics table back into series, in first-appearance order.
/// Epochs must run 1..=T contiguously per series, and the stored cv column
/// must agree with recomputation.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricSeries>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("epoch,layer,kind,value,cv,mcr_percent") => {}
        other => {
            return Err(Error::format(format!(
                "bad metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut order: Vec<(String, MetricKind)> = Vec::new();
    let mut table: std::collections::HashMap<(String, MetricKind), Vec<(usize, i64)>> =
        std::collections::HashMap::new();
    for (li, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::format(format!(
                "metrics row {} has {} cells, want 6",
                li + 2,
                cells.len()
            )));
        }
        let bad = |what: &str| Error::format(format!("metrics row {}: bad {}", li + 2, what));
        let epoch: usize = cells[0].parse().map_err(|_| bad("epoch"))?;
        let kind = match cells[2] {
            "dof" => MetricKind::Dof,
            "rank" => MetricKind::Rank,
            _ => return Err(bad("kind")),
        };
        let value: i64 = cells[3].parse().map_err(|_| bad("value"))?;
        let key = (cells[1].to_string(), kind);
        if !table.contains_key(&key) {
            order.push(key.clone());
        }
        table.entry(key).or_default().push((epoch, value));
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let rows = table.remove(&key).unwrap();
        for (t, (epoch, _)) in rows.iter().enumerate() {
            if *epoch != t + 1 {
                return Err(Error::format(format!(
                    "series {} ({}) has epoch {} where {} expected",
                    key.0,
                    key.1.as_str(),
                    epoch,
                    t + 1
                )));
            }
        }
        out.push(MetricSeries {
            layer: key.0,
            kind: key.1,
            values: rows.into_iter().map(|(_, v)| v).collect(),
        });
    }
    Ok(out)
}
