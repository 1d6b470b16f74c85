//! Accept/reject gating over contribution scores.
//!
//! Two policies: a fixed threshold, and a dynamic threshold that holds a
//! target acceptance rate by taking an empirical quantile over a bounded
//! window of recent scores. Acceptance is strict: ties reject.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolved gate settings, buildable into a [`GatePolicy`] per worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateConfig {
    Fixed { tau: f64 },
    Dynamic { target_rate: f64, window: usize, warmup: usize },
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GateConfig::Fixed { tau } => {
                if tau.is_nan() {
                    return Err(Error::Parameter("tau must not be NaN".into()));
                }
            }
            GateConfig::Dynamic { target_rate, window, warmup } => {
                if !(target_rate > 0.0 && target_rate < 1.0) {
                    return Err(Error::Parameter(format!(
                        "target_rate must be in (0, 1), got {target_rate}"
                    )));
                }
                if window == 0 {
                    return Err(Error::Parameter("window capacity must be at least 1".into()));
                }
                if warmup == 0 || warmup > window {
                    return Err(Error::Parameter(format!(
                        "warmup must be in [1, window]; got warmup {warmup}, window {window}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<GatePolicy> {
        self.validate()?;
        Ok(GatePolicy { config: *self, window: VecDeque::new() })
    }
}

/// Gate state: configuration plus the bounded window of recent scores
/// (dynamic mode only).
#[derive(Debug, Clone, PartialEq)]
pub struct GatePolicy {
    config: GateConfig,
    window: VecDeque<f64>,
}

/// Outcome of gating one score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accepted: bool,
    pub effective_tau: f64,
    pub score: f64,
    pub iteration: u64,
}

/// Type-7 quantile (linear interpolation between order statistics).
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl GatePolicy {
    pub fn config(&self) -> &GateConfig {
        &self.config
    }

    /// Decide on a score; dynamic mode records it afterwards.
    ///
    /// During dynamic warmup (window shorter than the warmup length) every
    /// score is accepted against an effective threshold of negative infinity,
    /// so `accepted == (score > effective_tau)` holds unconditionally.
    pub fn decide(&mut self, score: f64, iteration: u64) -> Result<GateDecision> {
        if score.is_nan() {
            return Err(Error::Parameter("gate score must not be NaN".into()));
        }
        let effective_tau = match self.config {
            GateConfig::Fixed { tau } => tau,
            GateConfig::Dynamic { target_rate, warmup, .. } => {
                if self.window.len() < warmup {
                    f64::NEG_INFINITY
                } else {
                    let mut sorted: Vec<f64> = self.window.iter().copied().collect();
                    sorted.sort_by(|a, b| a.partial_cmp(b).expect("window scores are ordered"));
                    quantile_type7(&sorted, 1.0 - target_rate)
                }
            }
        };
        let accepted = score > effective_tau;
        if let GateConfig::Dynamic { window, .. } = self.config {
            if self.window.len() == window {
                self.window.pop_front();
            }
            self.window.push_back(score);
        }
        Ok(GateDecision { accepted, effective_tau, score, iteration })
    }

    /// Recent-score window length (dynamic mode; always 0 for fixed).
    pub fn window_len(&self) -> usize {
        self.window.len()
    }
}

/// Accepted fraction over the last `ceil(tail_fraction * n)` decisions.
pub fn acceptance_rate(decisions: &[GateDecision], tail_fraction: f64) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Parameter("decision list must be non-empty".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "tail_fraction must be in (0, 1], got {tail_fraction}"
        )));
    }
    let take = ((tail_fraction * decisions.len() as f64).ceil() as usize).max(1);
    let tail = &decisions[decisions.len() - take..];
    let accepted = tail.iter().filter(|d| d.accepted).count();
    Ok(accepted as f64 / tail.len() as f64)
}
