//! File-backed experiment configuration.
//!
//! TOML with five sections (`world`, `model`, `run`, `estimator`, `gate`)
//! plus a versioned header. Unknown keys are rejected. Every field has a
//! default, so a minimal config is just a schema version and a name.
//! Overrides arrive as repeated `--set dotted.key=value` flags and are
//! spliced into the parsed document before type checking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gal_core::datastream::{SamplingStrategy, WorldConfig};
use gal_core::estimator::EstimatorKind;
use gal_core::gate::GateConfig;
use gal_core::model::{ClassifierConfig, LossSelector};
use gal_core::trainer::{RunConfig, TrainSetup};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// `[run]` section: loop shape, learning rates, sampling, seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: u64,
    pub b_accept: usize,
    pub b_test: usize,
    pub num_workers: usize,
    pub alpha0: f64,
    pub alpha_final: f64,
    pub sampling: SamplingStrategy,
    pub k_max: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub parallel: bool,
    pub train_selector: LossSelector,
    /// Estimation step size override; omitted means "track the learning rate".
    pub est_alpha: Option<f64>,
    /// Fraction of the candidate pool kept by offline filtering.
    pub keep_fraction: f64,
    pub offline_pool_size: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            iterations: run.iterations,
            b_accept: run.b_accept,
            b_test: run.b_test,
            num_workers: run.num_workers,
            alpha0: run.alpha0,
            alpha_final: run.alpha_final,
            sampling: run.sampling,
            k_max: run.k_max,
            seed: run.seed,
            eval_every: run.eval_every,
            parallel: run.parallel,
            train_selector: run.train_selector,
            est_alpha: None,
            keep_fraction: 0.5,
            offline_pool_size: run.offline_pool_size,
        }
    }
}

/// `[estimator]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub normalized: bool,
    pub beta: f64,
    pub selector: LossSelector,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            kind: run.estimator,
            normalized: run.normalized,
            beta: run.beta,
            selector: run.est_selector,
        }
    }
}

/// `[gate]` section. When `kind` is omitted the gate is derived from the
/// scoring mode: dynamic for normalized (cosine) scores, fixed tau for raw
/// dot-product scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub kind: Option<String>,
    pub tau: f64,
    pub target_rate: f64,
    pub window: usize,
    pub warmup: usize,
}

impl Default for GateSection {
    fn default() -> Self {
        Self { kind: None, tau: -0.05, target_rate: 0.45, window: 512, warmup: 64 }
    }
}

/// Whole experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub model: ClassifierConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub gate: GateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "default".to_string(),
            out_dir: None,
            world: WorldConfig::default(),
            model: ClassifierConfig::default(),
            run: RunSection::default(),
            estimator: EstimatorSection::default(),
            gate: GateSection::default(),
        }
    }
}

/// Parse an override's right-hand side as a TOML value; bare words become
/// strings.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(table) => table.into_iter().next().map(|(_, v)| v).unwrap_or_else(|| {
            toml::Value::String(raw.to_string())
        }),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Splice `key=value` into the parsed document, creating intermediate tables.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw_value) = spec.split_once('=').ok_or_else(|| {
        HarnessError::Usage(format!("override {spec:?} is not of the form key=value"))
    })?;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(HarnessError::Usage(format!("override key {key:?} has empty segments")));
    }
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                HarnessError::Config(format!("override key {key:?} crosses a non-table value"))
            })?;
    }
    current.insert(segments[segments.len() - 1].to_string(), parse_override_value(raw_value));
    Ok(())
}

impl ExperimentConfig {
    /// Load a config file and apply `--set` overrides, strictly typed.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|err| {
            HarnessError::Usage(format!("cannot read config {}: {err}", path.display()))
        })?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|err| HarnessError::Config(format!("config parse error: {err}")))?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let config: ExperimentConfig = table
            .try_into()
            .map_err(|err| HarnessError::Config(format!("config schema error: {err}")))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        if config.name.is_empty() {
            return Err(HarnessError::Config("experiment name must be non-empty".into()));
        }
        Ok(config)
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_toml().as_bytes()))
    }

    /// SHA-256 over the model section alone; stored in parameter files so a
    /// vector is never loaded into a differently-shaped model.
    pub fn model_hash(&self) -> [u8; 32] {
        model_hash(&self.model)
    }

    fn resolved_gate(&self) -> Result<GateConfig> {
        let gate = match self.gate.kind.as_deref() {
            Some("fixed") => GateConfig::Fixed { tau: self.gate.tau },
            Some("dynamic") => GateConfig::Dynamic {
                target_rate: self.gate.target_rate,
                window: self.gate.window,
                warmup: self.gate.warmup,
            },
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown gate kind {other:?}; expected \"fixed\" or \"dynamic\""
                )))
            }
            None => {
                if self.estimator.normalized {
                    GateConfig::Dynamic {
                        target_rate: self.gate.target_rate,
                        window: self.gate.window,
                        warmup: self.gate.warmup,
                    }
                } else {
                    GateConfig::Fixed { tau: self.gate.tau }
                }
            }
        };
        Ok(gate)
    }

    /// Resolve into the engine's validated run setup.
    pub fn resolve(&self) -> Result<TrainSetup> {
        let run = RunConfig {
            iterations: self.run.iterations,
            b_accept: self.run.b_accept,
            b_test: self.run.b_test,
            num_workers: self.run.num_workers,
            alpha0: self.run.alpha0,
            alpha_final: self.run.alpha_final,
            estimator: self.estimator.kind,
            normalized: self.estimator.normalized,
            beta: self.estimator.beta,
            est_selector: self.estimator.selector,
            train_selector: self.run.train_selector,
            est_alpha: self.run.est_alpha,
            gate: self.resolved_gate()?,
            sampling: self.run.sampling,
            k_max: self.run.k_max,
            seed: self.run.seed,
            eval_every: self.run.eval_every,
            parallel: self.run.parallel,
            offline_pool_size: self.run.offline_pool_size,
        };
        if !(self.run.keep_fraction > 0.0 && self.run.keep_fraction <= 1.0) {
            return Err(HarnessError::Config(format!(
                "run.keep_fraction must be in (0, 1], got {}",
                self.run.keep_fraction
            )));
        }
        let setup = TrainSetup { world: self.world.clone(), model: self.model.clone(), run };
        setup.validate()?;
        Ok(setup)
    }
}

/// SHA-256 of a model configuration's canonical serialization.
pub fn model_hash(model: &ClassifierConfig) -> [u8; 32] {
    let text = toml::to_string(model).expect("model config serializes");
    Sha256::digest(text.as_bytes()).into()
}

/// Output root precedence: `--out` flag, config `out_dir`, `GAL_OUT_DIR`,
/// then `./runs`.
pub fn resolve_out_root(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &config.out_dir {
        return dir.clone();
    }
    if let Some(dir) = std::env::var_os("GAL_OUT_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from("runs")
}
