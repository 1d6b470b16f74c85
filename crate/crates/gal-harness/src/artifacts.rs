//! Deterministic artifact files.
//!
//! Every artifact is reproducible byte-for-byte from (config, seeds): stable
//! key order, floats at 17 significant digits, CSV per RFC 4180 (CRLF,
//! header row). Wall time is deliberately kept out of all of them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gal_core::datastream::LabeledSample;
use gal_core::trainer::{RunMode, TrainReport};

use crate::error::{HarnessError, Result};

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON fragment for a float: non-finite values (e.g. the warmup threshold)
/// have no JSON representation and become `null`.
fn json_f64(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        "null".to_string()
    }
}

fn json_f64_array(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| json_f64(*v)).collect();
    format!("[{}]", items.join(","))
}

fn json_bool_array(values: &[bool]) -> String {
    let items: Vec<&str> = values.iter().map(|b| if *b { "true" } else { "false" }).collect();
    format!("[{}]", items.join(","))
}

/// One `run.jsonl` line per iteration, stable key order. Runs that score
/// batches also carry the estimator kind and normalization flag.
pub fn write_run_jsonl(
    path: &Path,
    report: &TrainReport,
    scoring: Option<(&str, bool)>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let suffix = match scoring {
        Some((kind, normalized)) => format!(",\"estimator\":\"{kind}\",\"normalized\":{normalized}"),
        None => String::new(),
    };
    for rec in &report.records {
        writeln!(
            out,
            "{{\"iteration\":{},\"lr\":{},\"train_loss\":{},\"scores\":{},\"accepted\":{},\"effective_taus\":{},\"accept_rate\":{}{suffix}}}",
            rec.iteration,
            json_f64(rec.lr),
            json_f64(rec.train_loss),
            json_f64_array(&rec.scores),
            json_bool_array(&rec.accepted),
            json_f64_array(&rec.effective_taus),
            json_f64(rec.cumulative_accept_rate),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `summary.json` contents. Path-free and time-free so repeated runs of the
/// same config produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: String,
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    pub iterations: u64,
    pub b_train: usize,
    pub final_accuracy: f64,
    pub mean_accuracy: f64,
    pub acceptance_rate: f64,
    pub dropout_rate: Option<f64>,
    pub keep_fraction: Option<f64>,
    pub kept_mean_noise: Option<f64>,
    pub discarded_mean_noise: Option<f64>,
}

/// Human-facing mode label; a baseline that never draws generated samples is
/// a real-only run.
pub fn mode_label(report: &TrainReport, k_max: u64) -> &'static str {
    match report.mode {
        RunMode::Baseline if k_max == 0 => "real-only",
        RunMode::Baseline => "baseline",
        RunMode::Bsgal => "bsgal",
        RunMode::RandomDropout => "random-dropout",
        RunMode::OfflineFilter => "offline-filter",
    }
}

pub fn build_summary(
    report: &TrainReport,
    experiment: &str,
    config_hash: &str,
    seed: u64,
    b_train: usize,
    k_max: u64,
) -> RunSummary {
    let mean_accuracy = if report.accuracy_trajectory.is_empty() {
        0.0
    } else {
        report.accuracy_trajectory.iter().map(|(_, a)| a).sum::<f64>()
            / report.accuracy_trajectory.len() as f64
    };
    RunSummary {
        schema_version: crate::config::SCHEMA_VERSION,
        experiment: experiment.to_string(),
        mode: mode_label(report, k_max).to_string(),
        config_hash: config_hash.to_string(),
        seed,
        iterations: report.records.len() as u64,
        b_train,
        final_accuracy: report.final_accuracy,
        mean_accuracy,
        acceptance_rate: report.acceptance_rate,
        dropout_rate: report.dropout_rate,
        keep_fraction: report.offline_stats.as_ref().map(|s| s.keep_fraction),
        kept_mean_noise: report.offline_stats.as_ref().map(|s| s.kept_mean_noise),
        discarded_mean_noise: report.offline_stats.as_ref().and_then(|s| s.discarded_mean_noise),
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|err| HarnessError::Runtime(format!("summary serialization: {err}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|err| {
        HarnessError::Config(format!("cannot read summary {}: {err}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|err| HarnessError::Config(format!("summary parse error: {err}")))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path)?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(file))
}

/// Histogram rows: one per (tier, bin).
pub struct HistogramRow {
    pub tier: f64,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

pub fn write_histogram_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["tier", "bin_left", "bin_right", "count"])
        .map_err(csv_err)?;
    for row in rows {
        out.write_record([
            fmt_f64(row.tier),
            fmt_f64(row.bin_left),
            fmt_f64(row.bin_right),
            row.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-tier score statistics.
pub struct TierStatsRow {
    pub tier: f64,
    pub mean: f64,
    pub std: f64,
    pub count: u64,
}

pub fn write_tier_stats_csv(path: &Path, rows: &[TierStatsRow]) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["tier", "mean", "std", "count"]).map_err(csv_err)?;
    for row in rows {
        out.write_record([
            fmt_f64(row.tier),
            fmt_f64(row.mean),
            fmt_f64(row.std),
            row.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One sweep row: the axis value with accuracy statistics over seeds.
pub struct ComparisonRow {
    pub value: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_acceptance_rate: f64,
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["value", "mean_accuracy", "std_accuracy", "mean_acceptance_rate"])
        .map_err(csv_err)?;
    for row in rows {
        out.write_record([
            row.value.clone(),
            fmt_f64(row.mean_accuracy),
            fmt_f64(row.std_accuracy),
            fmt_f64(row.mean_acceptance_rate),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Dataset export: id, label, origin, noise_scale, then the feature columns.
pub fn write_samples_csv(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let mut out = csv_writer(path)?;
    let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
    let mut header = vec![
        "id".to_string(),
        "label".to_string(),
        "origin".to_string(),
        "noise_scale".to_string(),
    ];
    header.extend((0..dim).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let mut record = vec![
            s.id.to_string(),
            s.label.to_string(),
            s.origin.as_str().to_string(),
            fmt_f64(s.noise_scale),
        ];
        record.extend(s.features.iter().map(|f| fmt_f64(*f)));
        out.write_record(&record).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(err: csv::Error) -> HarnessError {
    HarnessError::Runtime(format!("csv write error: {err}"))
}
