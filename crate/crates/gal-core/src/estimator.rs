//! Contribution estimation for a batch of generated samples.
//!
//! Four interchangeable estimators score how much a generated batch would
//! help a one-step update, measured against a sampled test batch:
//!
//! * `loss_diff` — evaluate the test loss at two virtually updated parameter
//!   vectors (real-only step vs augmented step) and take the difference.
//! * `grad_dot` — first-order shortcut: `alpha * <grad(aug) - grad(real), grad(test)>`.
//! * `grad_cache` — like `grad_dot`, but the test gradient is replaced by an
//!   exponentially weighted cache of test gradients from earlier iterations.
//! * `grad_cache_global` — same cache, running global average instead of EMA.
//!
//! The cached variants optionally normalize to cosine similarity, which makes
//! the score scale-free.

use serde::{Deserialize, Serialize};

use crate::datastream::{Batch, LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::model::{sgd_step, Classifier, LossSelector};
use crate::numerics::{cosine, dot, ema_update, GradientVector, ParameterVector};

/// Which estimator produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LossDiff,
    GradDot,
    GradCache,
    GradCacheGlobal,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::LossDiff => "loss_diff",
            EstimatorKind::GradDot => "grad_dot",
            EstimatorKind::GradCache => "grad_cache",
            EstimatorKind::GradCacheGlobal => "grad_cache_global",
        }
    }

    /// Whether this kind maintains a gradient cache.
    pub fn uses_cache(self) -> bool {
        matches!(self, EstimatorKind::GradCache | EstimatorKind::GradCacheGlobal)
    }
}

/// How the gradient cache folds in each new test gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// `C <- beta * C + (1 - beta) * g` after the first update.
    Momentum,
    /// `C <- ((t-1)/t) * C + (1/t) * g`, i.e. the running mean of all updates.
    GlobalAverage,
}

/// Running aggregate of test-batch gradients.
///
/// Uninitialized until the first update; the first update always sets the
/// cache to the incoming gradient exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCache {
    values: Option<GradientVector>,
    beta: f64,
    updates: u64,
    mode: CacheMode,
}

impl GradCache {
    pub fn new(beta: f64, mode: CacheMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Parameter(format!("beta must be in [0, 1], got {beta}")));
        }
        Ok(Self { values: None, beta, updates: 0, mode })
    }

    /// Number of updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn values(&self) -> Option<&GradientVector> {
        self.values.as_ref()
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    /// Fold one test gradient into the cache.
    pub fn update(&mut self, gradient: &GradientVector) -> Result<()> {
        self.updates += 1;
        self.values = Some(match self.values.take() {
            None => gradient.clone(),
            Some(current) => match self.mode {
                CacheMode::Momentum => ema_update(&current, gradient, self.beta)?,
                CacheMode::GlobalAverage => {
                    let t = self.updates as f64;
                    ema_update(&current, gradient, (t - 1.0) / t)?
                }
            },
        });
        Ok(())
    }
}

/// A contribution score together with how it was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributionScore {
    pub value: f64,
    pub kind: EstimatorKind,
    pub normalized: bool,
    pub iteration: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn check_test_batch(test_batch: &Batch) -> Result<()> {
    if test_batch.is_empty() {
        return Err(Error::Parameter("test batch must be non-empty".into()));
    }
    Ok(())
}

/// The augmented batch must be the real batch plus appended samples.
fn check_augmented(real_batch: &Batch, aug_batch: &Batch) -> Result<()> {
    if aug_batch.len() < real_batch.len() {
        return Err(Error::Parameter(
            "augmented batch is shorter than the real batch".into(),
        ));
    }
    let prefix_matches = real_batch
        .samples()
        .iter()
        .zip(aug_batch.samples())
        .all(|(r, a)| r.id == a.id);
    if !prefix_matches {
        return Err(Error::Parameter(
            "augmented batch does not start with the real batch".into(),
        ));
    }
    Ok(())
}

/// Exact one-step contribution: test loss after a real-only virtual update
/// minus test loss after an augmented virtual update. Positive means the
/// generated samples helped. `params` is never mutated.
pub fn contribution_loss_diff(
    model: &Classifier,
    params: &ParameterVector,
    real_batch: &Batch,
    aug_batch: &Batch,
    test_batch: &Batch,
    alpha: f64,
    selector: LossSelector,
) -> Result<ContributionScore> {
    check_augmented(real_batch, aug_batch)?;
    let g_real = model.backward(params, real_batch, selector)?;
    let g_aug = model.backward(params, aug_batch, selector)?;
    let value = loss_diff_from_grads(model, params, &g_real, &g_aug, test_batch, alpha, selector)?;
    Ok(ContributionScore { value, kind: EstimatorKind::LossDiff, normalized: false, iteration: 0 })
}

/// `loss_diff` core: takes precomputed real/augmented gradients.
pub fn loss_diff_from_grads(
    model: &Classifier,
    params: &ParameterVector,
    g_real: &GradientVector,
    g_aug: &GradientVector,
    test_batch: &Batch,
    alpha: f64,
    selector: LossSelector,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_test_batch(test_batch)?;
    let theta_real = sgd_step(params, g_real, alpha)?;
    let theta_aug = sgd_step(params, g_aug, alpha)?;
    let loss_real = model.forward_loss(&theta_real, test_batch, selector)?;
    let loss_aug = model.forward_loss(&theta_aug, test_batch, selector)?;
    Ok(loss_real.total - loss_aug.total)
}

/// First-order contribution: `alpha * <grad(aug) - grad(real), grad(test)>`.
/// One forward/backward per batch, no parameter updates.
pub fn contribution_grad_dot(
    model: &Classifier,
    params: &ParameterVector,
    real_batch: &Batch,
    aug_batch: &Batch,
    test_batch: &Batch,
    alpha: f64,
    selector: LossSelector,
) -> Result<ContributionScore> {
    check_augmented(real_batch, aug_batch)?;
    check_alpha(alpha)?;
    check_test_batch(test_batch)?;
    let g_real = model.backward(params, real_batch, selector)?;
    let g_aug = model.backward(params, aug_batch, selector)?;
    let delta = g_aug.sub(&g_real)?;
    let g_test = model.backward(params, test_batch, selector)?;
    let value = alpha * dot(&delta, &g_test)?;
    Ok(ContributionScore { value, kind: EstimatorKind::GradDot, normalized: false, iteration: 0 })
}

/// Score a gradient difference against a cache that has just absorbed the
/// current test gradient.
pub fn cache_score_from_grads(
    cache: &mut GradCache,
    delta: &GradientVector,
    g_test: &GradientVector,
    alpha: f64,
    normalized: bool,
) -> Result<f64> {
    check_alpha(alpha)?;
    cache.update(g_test)?;
    let cached = cache.values().expect("cache initialized by update");
    if normalized {
        cosine(delta, cached)
    } else {
        Ok(alpha * dot(delta, cached)?)
    }
}

/// Cache-backed contribution. Updates `cache` with the current test gradient
/// (first update initializes it), then scores the gradient difference against
/// the cache — either `alpha`-scaled dot product or, when `normalized`,
/// cosine similarity (`alpha` dropped: cosine is scale-free).
#[allow(clippy::too_many_arguments)]
pub fn contribution_grad_cache(
    cache: &mut GradCache,
    model: &Classifier,
    params: &ParameterVector,
    real_batch: &Batch,
    aug_batch: &Batch,
    test_batch: &Batch,
    alpha: f64,
    selector: LossSelector,
    normalized: bool,
) -> Result<ContributionScore> {
    check_augmented(real_batch, aug_batch)?;
    check_alpha(alpha)?;
    check_test_batch(test_batch)?;
    let g_real = model.backward(params, real_batch, selector)?;
    let g_aug = model.backward(params, aug_batch, selector)?;
    let delta = g_aug.sub(&g_real)?;
    let g_test = model.backward(params, test_batch, selector)?;
    let value = cache_score_from_grads(cache, &delta, &g_test, alpha, normalized)?;
    let kind = match cache.mode() {
        CacheMode::Momentum => EstimatorKind::GradCache,
        CacheMode::GlobalAverage => EstimatorKind::GradCacheGlobal,
    };
    Ok(ContributionScore { value, kind, normalized, iteration: cache.updates() })
}

/// Offline single-sample contribution against a precomputed reference
/// gradient (typically the full real dataset's gradient at frozen params).
pub fn contribution_single_offline(
    model: &Classifier,
    params: &ParameterVector,
    sample: &LabeledSample,
    test_gradient: &GradientVector,
    alpha: f64,
    selector: LossSelector,
) -> Result<ContributionScore> {
    check_alpha(alpha)?;
    let g = model.backward(params, &Batch::from_samples(vec![sample.clone()]), selector)?;
    let value = alpha * dot(&g, test_gradient)?;
    Ok(ContributionScore {
        value,
        kind: EstimatorKind::GradDot,
        normalized: false,
        iteration: 0,
    })
}

/// Gradient of the generated samples alone. Under append-mode augmentation
/// and sum-loss this equals `grad(aug) - grad(real)` without the extra
/// forward/backward on the real batch.
pub fn generated_only_gradient(
    model: &Classifier,
    params: &ParameterVector,
    gen_batch: &Batch,
    selector: LossSelector,
) -> Result<GradientVector> {
    if let Some(bad) = gen_batch.samples().iter().find(|s| s.origin != Origin::Generated) {
        return Err(Error::Contract(format!(
            "generated-only gradient received sample {} with origin {}",
            bad.id,
            bad.origin.as_str()
        )));
    }
    model.backward(params, gen_batch, selector)
}
