//! Training runners.
//!
//! Four loops over the same world and model:
//!
//! * [`run_baseline`] — train on real batches plus whatever the generated
//!   stream hands out, unconditionally.
//! * [`run_bsgal`] — score each worker's generated batch online and let a
//!   gate decide between the augmented and the real-only gradient.
//! * [`run_random_dropout`] — control: replace the gate with a coin flip at a
//!   measured acceptance rate.
//! * [`run_offline_filter`] — score a finite candidate pool once against a
//!   frozen model, keep the top fraction, then train baseline-style on it.
//!
//! Every source of randomness is a named per-worker stream derived from the
//! run seed, so consuming one stream never shifts another. That is what makes
//! "gate forced open == baseline" and "gate forced shut == no generated data"
//! hold bit-for-bit.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastream::{
    augment, make_world, sample_real_batch, sample_test_batch, Batch, EvalSet, GeneratedStream,
    LabeledSample, RealDataset, SamplingStrategy, WorldConfig,
};
use crate::error::{Error, Result};
use crate::estimator::{
    cache_score_from_grads, contribution_single_offline, loss_diff_from_grads, CacheMode,
    EstimatorKind, GradCache,
};
use crate::gate::{GateConfig, GatePolicy};
use crate::model::{sgd_step, Classifier, ClassifierConfig, LossSelector};
use crate::numerics::{GradientVector, ParameterVector};
use crate::seeding::{derive_seed, stream_rng};

/// Runner parameters. The total update batch size is
/// `b_accept * num_workers`; each worker decides on its own sub-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: u64,
    /// Per-worker real batch size (the decision granularity).
    pub b_accept: usize,
    /// Test batch size used for contribution estimation.
    pub b_test: usize,
    pub num_workers: usize,
    /// Initial learning rate; cosine-decayed to `alpha_final`.
    pub alpha0: f64,
    pub alpha_final: f64,
    pub estimator: EstimatorKind,
    /// Cosine-normalize cache-backed scores (scale-free).
    pub normalized: bool,
    /// Momentum coefficient of the gradient cache.
    pub beta: f64,
    /// Loss components used for contribution estimation.
    pub est_selector: LossSelector,
    /// Loss components used for the actual parameter updates.
    pub train_selector: LossSelector,
    /// Estimation step size; `None` ties it to the current learning rate.
    pub est_alpha: Option<f64>,
    pub gate: GateConfig,
    pub sampling: SamplingStrategy,
    /// Per-iteration generated-sample count is uniform on `[0, k_max]`.
    pub k_max: u64,
    pub seed: u64,
    /// Evaluation cadence in iterations; 0 means `iterations / 50`.
    pub eval_every: u64,
    /// Compute worker sub-batches on a thread pool. Results are identical to
    /// the sequential path: the gradient reduction is an ordered fold.
    pub parallel: bool,
    /// Candidate pool size for offline filtering.
    pub offline_pool_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            b_accept: 16,
            b_test: 32,
            num_workers: 4,
            alpha0: 0.05,
            alpha_final: 0.005,
            estimator: EstimatorKind::GradCache,
            normalized: true,
            beta: 0.1,
            est_selector: LossSelector::cls_only(),
            train_selector: LossSelector::all(),
            est_alpha: None,
            gate: GateConfig::Dynamic { target_rate: 0.45, window: 512, warmup: 64 },
            sampling: SamplingStrategy::PastedClasses,
            k_max: 8,
            seed: 42,
            eval_every: 0,
            parallel: false,
            offline_pool_size: 4000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be at least 1".into()));
        }
        if self.b_accept == 0 || self.b_test == 0 {
            return Err(Error::Parameter("batch sizes must be at least 1".into()));
        }
        if self.num_workers == 0 {
            return Err(Error::Parameter("num_workers must be at least 1".into()));
        }
        if !(self.alpha0 > 0.0) || !(self.alpha_final > 0.0) {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Parameter(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if let Some(a) = self.est_alpha {
            if !(a > 0.0) {
                return Err(Error::Parameter("est_alpha must be positive".into()));
            }
        }
        if self.normalized && !self.estimator.uses_cache() {
            return Err(Error::Parameter(format!(
                "normalized scoring requires a cache-backed estimator, got {}",
                self.estimator.as_str()
            )));
        }
        if self.offline_pool_size == 0 {
            return Err(Error::Parameter("offline_pool_size must be at least 1".into()));
        }
        self.gate.validate()
    }

    /// Total update batch size.
    pub fn b_train(&self) -> usize {
        self.b_accept * self.num_workers
    }

    fn eval_cadence(&self) -> u64 {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.iterations / 50).max(1)
        }
    }
}

/// Everything a runner needs: world, model, and run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub world: WorldConfig,
    pub model: ClassifierConfig,
    pub run: RunConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.run.validate()?;
        if self.world.input_dim != self.model.input_dim {
            return Err(Error::Parameter(format!(
                "world input_dim {} does not match model input_dim {}",
                self.world.input_dim, self.model.input_dim
            )));
        }
        if self.world.num_classes != self.model.num_classes {
            return Err(Error::Parameter(format!(
                "world num_classes {} does not match model num_classes {}",
                self.world.num_classes, self.model.num_classes
            )));
        }
        Ok(())
    }
}

/// Which runner produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Bsgal,
    RandomDropout,
    OfflineFilter,
}

/// Per-iteration log entry. The per-worker vectors are empty when the runner
/// makes no decision of that kind (e.g. baseline has no scores).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lr: f64,
    /// Sum over workers of the loss actually used for the update.
    pub train_loss: f64,
    pub scores: Vec<f64>,
    pub accepted: Vec<bool>,
    pub effective_taus: Vec<f64>,
    /// Accepted fraction over all decisions up to and including this
    /// iteration; 1.0 for runners without decisions.
    pub cumulative_accept_rate: f64,
}

/// Kept/discarded statistics of an offline filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineFilterStats {
    pub pool_size: usize,
    pub kept: usize,
    pub keep_fraction: f64,
    pub kept_mean_noise: f64,
    pub discarded_mean_noise: Option<f64>,
}

/// Full result of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub mode: RunMode,
    pub records: Vec<IterationRecord>,
    /// `(iteration, accuracy)` at the evaluation cadence; always includes the
    /// final iteration.
    pub accuracy_trajectory: Vec<(u64, f64)>,
    pub final_accuracy: f64,
    pub final_params: ParameterVector,
    /// Accepted fraction over all decisions; 1.0 for decision-free runners.
    pub acceptance_rate: f64,
    /// Coin probability of the dropout control, when applicable.
    pub dropout_rate: Option<f64>,
    pub offline_stats: Option<OfflineFilterStats>,
    /// Measured duration; excluded from serialized artifacts.
    pub wall_time: Duration,
}

/// Cosine-annealed learning rate from `alpha0` (t = 1) to `alpha_final`
/// (t = total).
pub fn cosine_lr(alpha0: f64, alpha_final: f64, t: u64, total: u64) -> f64 {
    if total <= 1 {
        return alpha0;
    }
    let progress = (t - 1) as f64 / (total - 1) as f64;
    alpha_final + 0.5 * (alpha0 - alpha_final) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Evaluation shim: accuracy of the current parameters on the held-out set.
pub fn evaluate(model: &Classifier, params: &ParameterVector, eval: &EvalSet) -> Result<f64> {
    model.accuracy(params, eval)
}

struct Worker {
    stream: GeneratedStream,
    rng_real: ChaCha8Rng,
    rng_test: ChaCha8Rng,
    rng_dropout: ChaCha8Rng,
    cache: GradCache,
    gate: GatePolicy,
}

fn make_workers(run: &RunConfig, stream_proto: &GeneratedStream) -> Result<Vec<Worker>> {
    let cache_mode = match run.estimator {
        EstimatorKind::GradCacheGlobal => CacheMode::GlobalAverage,
        _ => CacheMode::Momentum,
    };
    (0..run.num_workers)
        .map(|w| {
            let w = w as u64;
            Ok(Worker {
                stream: stream_proto.reseeded(derive_seed(run.seed, "gen", w)),
                rng_real: stream_rng(run.seed, "real", w),
                rng_test: stream_rng(run.seed, "test", w),
                rng_dropout: stream_rng(run.seed, "dropout", w),
                cache: GradCache::new(run.beta, cache_mode)?,
                gate: run.gate.build()?,
            })
        })
        .collect()
}

struct WorkerOutcome {
    grad: GradientVector,
    loss: f64,
    score: Option<f64>,
    accepted: Option<bool>,
    effective_tau: Option<f64>,
}

fn baseline_worker_step(
    worker: &mut Worker,
    model: &Classifier,
    params: &ParameterVector,
    dataset: &RealDataset,
    run: &RunConfig,
) -> Result<WorkerOutcome> {
    let real = sample_real_batch(dataset, run.b_accept, &mut worker.rng_real)?;
    let k = worker.stream.draw_count(run.k_max);
    let gen = worker.stream.sample(k);
    let aug = augment(&real, &gen)?;
    let (loss, grad) = model.forward_backward(params, &aug, run.train_selector)?;
    Ok(WorkerOutcome { grad, loss: loss.total, score: None, accepted: None, effective_tau: None })
}

fn bsgal_worker_step(
    worker: &mut Worker,
    model: &Classifier,
    params: &ParameterVector,
    dataset: &RealDataset,
    run: &RunConfig,
    lr: f64,
    t: u64,
) -> Result<WorkerOutcome> {
    let real = sample_real_batch(dataset, run.b_accept, &mut worker.rng_real)?;
    let k = worker.stream.draw_count(run.k_max);
    let gen = worker.stream.sample(k);
    let aug = augment(&real, &gen)?;

    let (loss_real, g_real_train) = model.forward_backward(params, &real, run.train_selector)?;
    let (loss_aug, g_aug_train) = model.forward_backward(params, &aug, run.train_selector)?;
    let (g_real_est, g_aug_est) = if run.est_selector == run.train_selector {
        (g_real_train.clone(), g_aug_train.clone())
    } else {
        (
            model.backward(params, &real, run.est_selector)?,
            model.backward(params, &aug, run.est_selector)?,
        )
    };

    // With an empty generated batch the pasted-class set is empty; fall back
    // to all-classes sampling so the cache still sees a test gradient.
    let gen_classes: BTreeSet<usize> = gen.label_set();
    let strategy = if gen_classes.is_empty() && run.sampling == SamplingStrategy::PastedClasses {
        SamplingStrategy::AllClasses
    } else {
        run.sampling
    };
    let test = sample_test_batch(dataset, strategy, &gen_classes, run.b_test, &mut worker.rng_test)?;

    let est_alpha = run.est_alpha.unwrap_or(lr);
    let score = match run.estimator {
        EstimatorKind::LossDiff => loss_diff_from_grads(
            model,
            params,
            &g_real_est,
            &g_aug_est,
            &test,
            est_alpha,
            run.est_selector,
        )?,
        EstimatorKind::GradDot => {
            let delta = g_aug_est.sub(&g_real_est)?;
            let g_test = model.backward(params, &test, run.est_selector)?;
            est_alpha * crate::numerics::dot(&delta, &g_test)?
        }
        EstimatorKind::GradCache | EstimatorKind::GradCacheGlobal => {
            let delta = g_aug_est.sub(&g_real_est)?;
            let g_test = model.backward(params, &test, run.est_selector)?;
            cache_score_from_grads(&mut worker.cache, &delta, &g_test, est_alpha, run.normalized)?
        }
    };

    let decision = worker.gate.decide(score, t)?;
    let (grad, loss) = if decision.accepted {
        (g_aug_train, loss_aug.total)
    } else {
        (g_real_train, loss_real.total)
    };
    Ok(WorkerOutcome {
        grad,
        loss,
        score: Some(score),
        accepted: Some(decision.accepted),
        effective_tau: Some(decision.effective_tau),
    })
}

fn dropout_worker_step(
    worker: &mut Worker,
    model: &Classifier,
    params: &ParameterVector,
    dataset: &RealDataset,
    run: &RunConfig,
    rate: f64,
) -> Result<WorkerOutcome> {
    let real = sample_real_batch(dataset, run.b_accept, &mut worker.rng_real)?;
    let k = worker.stream.draw_count(run.k_max);
    let gen = worker.stream.sample(k);
    let accepted = worker.rng_dropout.random_bool(rate);
    let batch = if accepted { augment(&real, &gen)? } else { real };
    let (loss, grad) = model.forward_backward(params, &batch, run.train_selector)?;
    Ok(WorkerOutcome {
        grad,
        loss: loss.total,
        score: None,
        accepted: Some(accepted),
        effective_tau: None,
    })
}

/// Draws for the offline runner come from the kept candidate pool instead of
/// the live stream.
fn pool_worker_step(
    worker: &mut Worker,
    model: &Classifier,
    params: &ParameterVector,
    dataset: &RealDataset,
    run: &RunConfig,
    pool: &[LabeledSample],
) -> Result<WorkerOutcome> {
    let real = sample_real_batch(dataset, run.b_accept, &mut worker.rng_real)?;
    let k = worker.stream.draw_count(run.k_max);
    let picks: Vec<LabeledSample> = (0..k)
        .map(|_| pool[worker.stream.draw_index(pool.len())].clone())
        .collect();
    let aug = augment(&real, &Batch::from_samples(picks))?;
    let (loss, grad) = model.forward_backward(params, &aug, run.train_selector)?;
    Ok(WorkerOutcome { grad, loss: loss.total, score: None, accepted: None, effective_tau: None })
}

struct LoopOutput {
    records: Vec<IterationRecord>,
    trajectory: Vec<(u64, f64)>,
    final_params: ParameterVector,
    accepted_total: u64,
    decisions_total: u64,
}

/// Shared loop skeleton: per-worker steps, ordered gradient fold, one SGD
/// update per iteration, cadenced evaluation.
fn run_loop<F>(
    setup: &TrainSetup,
    workers: &mut [Worker],
    model: &Classifier,
    eval: &EvalSet,
    mut step: F,
) -> Result<LoopOutput>
where
    F: FnMut(&mut [Worker], &ParameterVector, f64, u64) -> Result<Vec<WorkerOutcome>>,
{
    let run = &setup.run;
    let total = run.iterations;
    let cadence = run.eval_cadence();
    let mut params = model.init_params();
    let mut records = Vec::with_capacity(total as usize);
    let mut trajectory = Vec::new();
    let mut accepted_total = 0u64;
    let mut decisions_total = 0u64;

    for t in 1..=total {
        let lr = cosine_lr(run.alpha0, run.alpha_final, t, total);
        let outcomes = step(workers, &params, lr, t)?;

        let mut summed: Option<GradientVector> = None;
        let mut train_loss = 0.0;
        let mut scores = Vec::new();
        let mut accepted = Vec::new();
        let mut effective_taus = Vec::new();
        for outcome in outcomes {
            summed = Some(match summed {
                None => outcome.grad,
                Some(acc) => acc.add(&outcome.grad)?,
            });
            train_loss += outcome.loss;
            if let Some(s) = outcome.score {
                scores.push(s);
            }
            if let Some(a) = outcome.accepted {
                accepted.push(a);
                decisions_total += 1;
                accepted_total += u64::from(a);
            }
            if let Some(tau) = outcome.effective_tau {
                effective_taus.push(tau);
            }
        }
        let summed = summed.expect("at least one worker");
        params = sgd_step(&params, &summed, lr)?;

        let cumulative_accept_rate = if decisions_total == 0 {
            1.0
        } else {
            accepted_total as f64 / decisions_total as f64
        };
        records.push(IterationRecord {
            iteration: t,
            lr,
            train_loss,
            scores,
            accepted,
            effective_taus,
            cumulative_accept_rate,
        });

        if t % cadence == 0 || t == total {
            trajectory.push((t, model.accuracy(&params, eval)?));
        }
    }

    Ok(LoopOutput {
        records,
        trajectory,
        final_params: params,
        accepted_total,
        decisions_total,
    })
}

fn finish(mode: RunMode, out: LoopOutput, start: Instant) -> TrainReport {
    let final_accuracy = out.trajectory.last().map(|(_, a)| *a).unwrap_or(0.0);
    let acceptance_rate = if out.decisions_total == 0 {
        1.0
    } else {
        out.accepted_total as f64 / out.decisions_total as f64
    };
    TrainReport {
        mode,
        records: out.records,
        accuracy_trajectory: out.trajectory,
        final_accuracy,
        final_params: out.final_params,
        acceptance_rate,
        dropout_rate: None,
        offline_stats: None,
        wall_time: start.elapsed(),
    }
}

/// Run all workers through one iteration, sequentially or on a thread pool.
/// Outcomes come back in ascending worker order either way.
fn run_workers<S>(workers: &mut [Worker], parallel: bool, step: S) -> Result<Vec<WorkerOutcome>>
where
    S: Fn(&mut Worker) -> Result<WorkerOutcome> + Sync + Send,
{
    if parallel {
        workers.par_iter_mut().map(step).collect()
    } else {
        workers.iter_mut().map(step).collect()
    }
}

/// Train on augmented batches unconditionally.
pub fn run_baseline(setup: &TrainSetup) -> Result<TrainReport> {
    let start = Instant::now();
    setup.validate()?;
    let (dataset, stream_proto, eval) = make_world(&setup.world)?;
    let model = Classifier::new(setup.model.clone())?;
    let mut workers = make_workers(&setup.run, &stream_proto)?;
    let run = setup.run.clone();
    let out = run_loop(setup, &mut workers, &model, &eval, |workers, params, _lr, _t| {
        run_workers(workers, run.parallel, |w| {
            baseline_worker_step(w, &model, params, &dataset, &run)
        })
    })?;
    Ok(finish(RunMode::Baseline, out, start))
}

/// Streaming run: estimate each worker's generated-batch contribution and
/// gate the augmented gradient per worker.
pub fn run_bsgal(setup: &TrainSetup) -> Result<TrainReport> {
    let start = Instant::now();
    setup.validate()?;
    let (dataset, stream_proto, eval) = make_world(&setup.world)?;
    let model = Classifier::new(setup.model.clone())?;
    let mut workers = make_workers(&setup.run, &stream_proto)?;
    let run = setup.run.clone();
    let out = run_loop(setup, &mut workers, &model, &eval, |workers, params, lr, t| {
        run_workers(workers, run.parallel, |w| {
            bsgal_worker_step(w, &model, params, &dataset, &run, lr, t)
        })
    })?;
    Ok(finish(RunMode::Bsgal, out, start))
}

/// Control run: accept each worker's generated batch with an independent coin
/// flip at `measured_rate` (typically taken from a finished streaming run).
pub fn run_random_dropout(setup: &TrainSetup, measured_rate: f64) -> Result<TrainReport> {
    let start = Instant::now();
    if !(0.0..=1.0).contains(&measured_rate) {
        return Err(Error::Parameter(format!(
            "measured_rate must be in [0, 1], got {measured_rate}"
        )));
    }
    setup.validate()?;
    let (dataset, stream_proto, eval) = make_world(&setup.world)?;
    let model = Classifier::new(setup.model.clone())?;
    let mut workers = make_workers(&setup.run, &stream_proto)?;
    let run = setup.run.clone();
    let out = run_loop(setup, &mut workers, &model, &eval, |workers, params, _lr, _t| {
        run_workers(workers, run.parallel, |w| {
            dropout_worker_step(w, &model, params, &dataset, &run, measured_rate)
        })
    })?;
    let mut report = finish(RunMode::RandomDropout, out, start);
    report.dropout_rate = Some(measured_rate);
    Ok(report)
}

/// Offline filtering: score a finite candidate pool against the full real
/// dataset's gradient at `pretrained` params, keep the top `keep_fraction`,
/// then train baseline-style drawing generated samples from the kept pool.
pub fn run_offline_filter(
    setup: &TrainSetup,
    keep_fraction: f64,
    pretrained: &ParameterVector,
) -> Result<TrainReport> {
    let start = Instant::now();
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    setup.validate()?;
    let (dataset, stream_proto, eval) = make_world(&setup.world)?;
    let model = Classifier::new(setup.model.clone())?;
    if pretrained.len() != model.param_count() {
        return Err(Error::Dimension { expected: model.param_count(), got: pretrained.len() });
    }
    let run = setup.run.clone();

    // Candidate pool and one reference gradient over the whole real dataset.
    let mut pool_stream = stream_proto.reseeded(derive_seed(run.seed, "pool", 0));
    let pool: Vec<LabeledSample> =
        (0..run.offline_pool_size).map(|_| pool_stream.sample_one()).collect();
    let reference = model.backward(pretrained, &dataset.as_batch(), run.est_selector)?;
    let score_alpha = run.est_alpha.unwrap_or(run.alpha0);
    let scores: Vec<f64> = pool
        .iter()
        .map(|s| {
            contribution_single_offline(&model, pretrained, s, &reference, score_alpha, run.est_selector)
                .map(|c| c.value)
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .expect("scores are finite")
            .then(a.cmp(b))
    });
    let keep_count = ((keep_fraction * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
    let mut kept_indices: Vec<usize> = order[..keep_count].to_vec();
    kept_indices.sort_unstable();
    let kept: Vec<LabeledSample> = kept_indices.iter().map(|i| pool[*i].clone()).collect();

    let kept_set: BTreeSet<usize> = kept_indices.iter().copied().collect();
    let mean_noise = |indices: &[usize]| -> f64 {
        indices.iter().map(|i| pool[*i].noise_scale).sum::<f64>() / indices.len() as f64
    };
    let discarded: Vec<usize> = (0..pool.len()).filter(|i| !kept_set.contains(i)).collect();
    let stats = OfflineFilterStats {
        pool_size: pool.len(),
        kept: kept.len(),
        keep_fraction,
        kept_mean_noise: mean_noise(&kept_indices),
        discarded_mean_noise: if discarded.is_empty() { None } else { Some(mean_noise(&discarded)) },
    };

    let mut workers = make_workers(&run, &stream_proto)?;
    let out = run_loop(setup, &mut workers, &model, &eval, |workers, params, _lr, _t| {
        run_workers(workers, run.parallel, |w| {
            pool_worker_step(w, &model, params, &dataset, &run, &kept)
        })
    })?;
    let mut report = finish(RunMode::OfflineFilter, out, start);
    report.offline_stats = Some(stats);
    Ok(report)
}
