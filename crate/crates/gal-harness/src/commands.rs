//! Command implementations behind the CLI surface.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gal_core::datastream::make_world;
use gal_core::estimator::contribution_single_offline;
use gal_core::model::Classifier;
use gal_core::seeding::stream_rng;
use gal_core::trainer::{
    run_baseline, run_bsgal, run_offline_filter, run_random_dropout, TrainReport,
};

use crate::artifacts::{
    build_summary, read_summary, write_comparison_csv, write_histogram_csv, write_run_jsonl,
    write_samples_csv, write_summary, write_tier_stats_csv, ComparisonRow, HistogramRow,
    TierStatsRow,
};
use crate::config::{resolve_out_root, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::params_io::{load_params, save_params};

/// Which trainer a `train` invocation drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Bsgal,
    Baseline,
    RandomDropout,
    Offline,
}

/// Flags shared by every config-driven command.
#[derive(Debug, Clone)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn effective_overrides(&self) -> Vec<String> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        overrides
    }

    pub fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.effective_overrides())
    }
}

fn prepare_run_dir(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<PathBuf> {
    let dir = resolve_out_root(out_flag, config).join(&config.name);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Extra inputs some train modes need.
#[derive(Debug, Clone, Default)]
pub struct TrainInputs {
    /// Pretrained parameter file (offline filtering).
    pub params: Option<PathBuf>,
    /// Explicit dropout acceptance rate.
    pub rate: Option<f64>,
    /// Summary file to copy the measured acceptance rate from.
    pub rate_from: Option<PathBuf>,
}

/// Run one training command and write `run.jsonl`, `summary.json`, and
/// `params.galp` into the run directory. Returns that directory.
pub fn cmd_train(mode: TrainMode, common: &CommonArgs, inputs: &TrainInputs) -> Result<PathBuf> {
    let config = common.load()?;
    let setup = config.resolve()?;
    let report: TrainReport = match mode {
        TrainMode::Bsgal => run_bsgal(&setup)?,
        TrainMode::Baseline => run_baseline(&setup)?,
        TrainMode::RandomDropout => {
            let rate = match (inputs.rate, &inputs.rate_from) {
                (Some(rate), _) => rate,
                (None, Some(path)) => {
                    let summary = read_summary(path)?;
                    summary.acceptance_rate
                }
                (None, None) => {
                    return Err(HarnessError::Usage(
                        "random-dropout requires --rate or --rate-from".into(),
                    ))
                }
            };
            run_random_dropout(&setup, rate)?
        }
        TrainMode::Offline => {
            let params_path = inputs.params.as_ref().ok_or_else(|| {
                HarnessError::Config("offline training requires --params <pretrained file>".into())
            })?;
            let pretrained = load_params(params_path, &config.model_hash())?;
            run_offline_filter(&setup, config.run.keep_fraction, &pretrained)?
        }
    };

    let dir = prepare_run_dir(&config, common.out.as_deref())?;
    let scoring = (mode == TrainMode::Bsgal)
        .then(|| (setup.run.estimator.as_str(), setup.run.normalized));
    write_run_jsonl(&dir.join("run.jsonl"), &report, scoring)?;
    let summary = build_summary(
        &report,
        &config.name,
        &config.config_hash(),
        setup.run.seed,
        setup.run.b_train(),
        setup.run.k_max,
    );
    write_summary(&dir.join("summary.json"), &summary)?;
    save_params(&dir.join("params.galp"), &report.final_params, &config.model_hash())?;

    eprintln!(
        "[{}] finished in {:.2}s",
        summary.mode,
        report.wall_time.as_secs_f64()
    );
    println!(
        "mode={} final_accuracy={:.4} acceptance_rate={:.4} out={}",
        summary.mode,
        summary.final_accuracy,
        summary.acceptance_rate,
        dir.display()
    );
    Ok(dir)
}

/// Score generated samples per noise tier against a frozen model; write a
/// shared-bin histogram CSV and a per-tier mean/std CSV.
pub fn cmd_distribution(
    common: &CommonArgs,
    params_path: &Path,
    samples_per_tier: usize,
) -> Result<PathBuf> {
    if samples_per_tier == 0 {
        return Err(HarnessError::Usage("--samples-per-tier must be at least 1".into()));
    }
    let config = common.load()?;
    let setup = config.resolve()?;
    let params = load_params(params_path, &config.model_hash())?;
    let (dataset, stream, _) = make_world(&setup.world)?;
    let model = Classifier::new(setup.model.clone())?;
    if params.len() != model.param_count() {
        return Err(HarnessError::Incompatible(format!(
            "parameter file holds {} values, model needs {}",
            params.len(),
            model.param_count()
        )));
    }
    let selector = setup.run.est_selector;
    let alpha = setup.run.est_alpha.unwrap_or(setup.run.alpha0);
    let reference = model.backward(&params, &dataset.as_batch(), selector)?;

    let tiers = setup.world.noise_tiers.clone();
    let mut per_tier_scores: Vec<Vec<f64>> = Vec::with_capacity(tiers.len());
    for (tier_index, _) in tiers.iter().enumerate() {
        let scores: Vec<f64> = if tier_index == 0 {
            // Tier 0 is the training data itself: these samples have already
            // been consumed by the frozen model.
            use rand::Rng;
            let mut rng = stream_rng(setup.run.seed, "dist-real", 0);
            (0..samples_per_tier)
                .map(|_| {
                    let sample = &dataset.samples()[rng.random_range(0..dataset.len())];
                    contribution_single_offline(&model, &params, sample, &reference, alpha, selector)
                        .map(|score| score.value)
                })
                .collect::<gal_core::Result<_>>()?
        } else {
            let mut tier_stream =
                stream.reseeded(gal_core::seeding::derive_seed(setup.run.seed, "dist-gen", tier_index as u64));
            (0..samples_per_tier)
                .map(|_| {
                    let sample = tier_stream.sample_at_tier(tier_index)?;
                    contribution_single_offline(&model, &params, &sample, &reference, alpha, selector)
                        .map(|score| score.value)
                })
                .collect::<gal_core::Result<_>>()?
        };
        per_tier_scores.push(scores);
    }

    // Shared bin edges keep the tiers comparable.
    let all: Vec<f64> = per_tier_scores.iter().flatten().copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo, lo + 1.0) };
    let bins = 40usize;
    let width = (hi - lo) / bins as f64;

    let mut histogram_rows = Vec::new();
    let mut stats_rows = Vec::new();
    for (tier_index, scores) in per_tier_scores.iter().enumerate() {
        let tier = tiers[tier_index];
        let mut counts = vec![0u64; bins];
        for v in scores {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        for (b, count) in counts.iter().enumerate() {
            histogram_rows.push(HistogramRow {
                tier,
                bin_left: lo + b as f64 * width,
                bin_right: lo + (b + 1) as f64 * width,
                count: *count,
            });
        }
        let (mean, std) = mean_std(scores);
        stats_rows.push(TierStatsRow { tier, mean, std, count: scores.len() as u64 });
    }

    let dir = prepare_run_dir(&config, common.out.as_deref())?;
    write_histogram_csv(&dir.join("histogram.csv"), &histogram_rows)?;
    write_tier_stats_csv(&dir.join("tier_stats.csv"), &stats_rows)?;
    for row in &stats_rows {
        println!(
            "tier={} mean={:+.6e} std={:.6e} n={}",
            row.tier, row.mean, row.std, row.count
        );
    }
    Ok(dir)
}

/// Sweep axes for `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateAxis {
    Beta,
    Tau,
    Sampling,
    Normalize,
    Estimator,
}

impl AblateAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblateAxis::Beta => "beta",
            AblateAxis::Tau => "tau",
            AblateAxis::Sampling => "sampling",
            AblateAxis::Normalize => "normalize",
            AblateAxis::Estimator => "estimator",
        }
    }

    /// Overrides that pin one axis value onto the base config.
    fn overrides_for(self, value: &str) -> Result<Vec<String>> {
        let check_f64 = |v: &str| -> Result<()> {
            v.parse::<f64>().map(|_| ()).map_err(|_| {
                HarnessError::Config(format!("axis value {v:?} is not a number"))
            })
        };
        Ok(match self {
            AblateAxis::Beta => {
                check_f64(value)?;
                vec![format!("estimator.beta={value}")]
            }
            // Raw-score thresholds: sweep the fixed gate on unnormalized dots.
            AblateAxis::Tau => {
                check_f64(value)?;
                vec![
                    "gate.kind=\"fixed\"".to_string(),
                    format!("gate.tau={value}"),
                    "estimator.normalized=false".to_string(),
                ]
            }
            AblateAxis::Sampling => {
                if !["all_classes", "pasted_classes", "all_images"].contains(&value) {
                    return Err(HarnessError::Config(format!(
                        "invalid sampling strategy {value:?}"
                    )));
                }
                vec![format!("run.sampling=\"{value}\"")]
            }
            AblateAxis::Normalize => {
                if !["true", "false"].contains(&value) {
                    return Err(HarnessError::Config(format!(
                        "normalize axis takes true/false, got {value:?}"
                    )));
                }
                vec![format!("estimator.normalized={value}")]
            }
            AblateAxis::Estimator => {
                let mut overrides = vec![format!("estimator.kind=\"{value}\"")];
                match value {
                    "grad_cache" | "grad_cache_global" => {}
                    "loss_diff" | "grad_dot" => {
                        overrides.push("estimator.normalized=false".to_string());
                    }
                    other => {
                        return Err(HarnessError::Config(format!(
                            "invalid estimator kind {other:?}"
                        )))
                    }
                }
                overrides
            }
        })
    }
}

/// Run the streaming trainer once per (value, seed) and write a comparison
/// CSV of per-value accuracy statistics.
pub fn cmd_ablate(
    axis: AblateAxis,
    values: &[String],
    seeds: u64,
    common: &CommonArgs,
) -> Result<PathBuf> {
    if values.len() < 2 {
        return Err(HarnessError::Usage("ablate requires at least 2 values".into()));
    }
    if seeds == 0 {
        return Err(HarnessError::Usage("--seeds must be at least 1".into()));
    }
    let base_config = common.load()?;
    let base_seed = base_config.run.seed;

    let mut rows = Vec::new();
    for value in values {
        let axis_overrides = axis.overrides_for(value)?;
        let mut accuracies = Vec::new();
        let mut rates = Vec::new();
        for i in 0..seeds {
            let mut overrides = common.effective_overrides();
            overrides.extend(axis_overrides.iter().cloned());
            overrides.push(format!("run.seed={}", base_seed + i));
            let config = ExperimentConfig::load(&common.config, &overrides)?;
            let setup = config.resolve()?;
            let report = run_bsgal(&setup)?;
            accuracies.push(report.final_accuracy);
            rates.push(report.acceptance_rate);
        }
        let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
        let (mean_acceptance_rate, _) = mean_std(&rates);
        println!(
            "{}={value}: accuracy {mean_accuracy:.4} +/- {std_accuracy:.4} accept {mean_acceptance_rate:.4}",
            axis.as_str()
        );
        rows.push(ComparisonRow {
            value: value.clone(),
            mean_accuracy,
            std_accuracy,
            mean_acceptance_rate,
        });
    }

    let dir = prepare_run_dir(&base_config, common.out.as_deref())?;
    let path = dir.join(format!("ablate_{}.csv", axis.as_str()));
    write_comparison_csv(&path, &rows)?;
    Ok(dir)
}

/// Print a table of run summaries; optionally write them as CSV.
pub fn cmd_report_runs(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if paths.is_empty() {
        return Err(HarnessError::Usage("report runs requires at least one summary.json".into()));
    }
    let mut summaries = Vec::new();
    for path in paths {
        summaries.push(read_summary(path)?);
    }
    println!(
        "{:<20} {:<16} {:>6} {:>10} {:>10} {:>10} {:>8}",
        "experiment", "mode", "seed", "final_acc", "mean_acc", "accept", "iters"
    );
    for s in &summaries {
        println!(
            "{:<20} {:<16} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            s.experiment, s.mode, s.seed, s.final_accuracy, s.mean_accuracy, s.acceptance_rate,
            s.iterations
        );
    }
    if let Some(out) = out {
        let file = std::fs::File::create(out)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        w.write_record([
            "experiment",
            "mode",
            "seed",
            "iterations",
            "final_accuracy",
            "mean_accuracy",
            "acceptance_rate",
            "config_hash",
        ])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        for s in &summaries {
            w.write_record([
                s.experiment.clone(),
                s.mode.clone(),
                s.seed.to_string(),
                s.iterations.to_string(),
                crate::artifacts::fmt_f64(s.final_accuracy),
                crate::artifacts::fmt_f64(s.mean_accuracy),
                crate::artifacts::fmt_f64(s.acceptance_rate),
                s.config_hash.clone(),
            ])
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Export the configured world's real dataset and eval set as CSV.
pub fn cmd_report_dataset(common: &CommonArgs) -> Result<PathBuf> {
    let config = common.load()?;
    let setup = config.resolve()?;
    let (dataset, _, eval) = make_world(&setup.world)?;
    let dir = prepare_run_dir(&config, common.out.as_deref())?;
    write_samples_csv(&dir.join("real_dataset.csv"), dataset.samples())?;
    write_samples_csv(&dir.join("eval_set.csv"), eval.samples())?;
    let classes: BTreeSet<usize> = dataset.samples().iter().map(|s| s.label).collect();
    println!(
        "exported {} real samples ({} classes) and {} eval samples to {}",
        dataset.len(),
        classes.len(),
        eval.len(),
        dir.display()
    );
    Ok(dir)
}
