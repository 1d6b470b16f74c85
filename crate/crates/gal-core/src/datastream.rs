//! Synthetic data world: a long-tailed labeled real dataset, an unbounded
//! generated-sample stream with controllable feature noise and label
//! corruption, append-mode batch augmentation, and the test-batch sampling
//! strategies used for contribution estimation.
//!
//! Classes are Gaussian blobs in feature space. Class means sit at the
//! vertices of a randomly rotated regular simplex on the unit sphere, which
//! maximizes pairwise separation for the configured class count.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;

/// Generated sample ids start here so they never collide with dataset ids.
const GENERATED_ID_BASE: u64 = 1 << 32;

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Generated,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Generated => "generated",
        }
    }
}

/// One labeled feature vector plus provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub origin: Origin,
    /// Scale of the feature noise injected at generation time; 0 for pristine.
    pub noise_scale: f64,
}

/// Ordered list of samples. Order is semantically meaningful: losses and
/// gradients reduce over it deterministically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    samples: Vec<LabeledSample>,
}

impl Batch {
    pub fn from_samples(samples: Vec<LabeledSample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct labels present, in ascending order.
    pub fn label_set(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Class frequency tier, derived from per-class sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyTier {
    /// 10 samples or fewer.
    Rare,
    /// 11 to 100 samples.
    Common,
    /// More than 100 samples.
    Frequent,
}

impl FrequencyTier {
    fn from_count(count: usize) -> Self {
        match count {
            0..=10 => FrequencyTier::Rare,
            11..=100 => FrequencyTier::Common,
            _ => FrequencyTier::Frequent,
        }
    }
}

/// The finite labeled real dataset, long-tailed over classes.
#[derive(Debug, Clone)]
pub struct RealDataset {
    samples: Vec<LabeledSample>,
    class_counts: Vec<usize>,
    frequency_tiers: Vec<FrequencyTier>,
    by_class: Vec<Vec<usize>>,
}

impl RealDataset {
    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn frequency_tiers(&self) -> &[FrequencyTier] {
        &self.frequency_tiers
    }

    /// Indices into `samples()` for one class.
    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// The whole dataset as one batch, in storage order.
    pub fn as_batch(&self) -> Batch {
        Batch::from_samples(self.samples.clone())
    }
}

/// Held-out pristine evaluation set, disjoint from the real dataset by id.
#[derive(Debug, Clone)]
pub struct EvalSet {
    samples: Vec<LabeledSample>,
}

impl EvalSet {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Configuration of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Isotropic standard deviation of each class blob.
    pub class_sigma: f64,
    /// Sample count of the most frequent class.
    pub real_base_count: usize,
    /// Power-law exponent for per-class counts; 0 gives uniform counts.
    pub tail_exponent: f64,
    pub eval_size: usize,
    /// Feature-noise scales the generated stream mixes over.
    pub noise_tiers: Vec<f64>,
    /// Mixture weights for the noise tiers (normalized internally).
    pub tier_weights: Vec<f64>,
    /// Probability of flipping the label at the maximum noise tier; scales
    /// linearly with the drawn tier.
    pub corruption_rate: f64,
    /// Debug mode: cycle classes round-robin instead of sampling uniformly.
    pub round_robin: bool,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 16,
            input_dim: 16,
            class_sigma: 0.28,
            real_base_count: 300,
            tail_exponent: 1.5,
            eval_size: 2000,
            noise_tiers: vec![0.0, 0.4, 1.0, 2.0, 4.0],
            tier_weights: vec![0.3, 0.15, 0.1, 0.15, 0.3],
            corruption_rate: 0.8,
            round_robin: false,
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Parameter("num_classes must be at least 2".into()));
        }
        if self.input_dim < self.num_classes {
            return Err(Error::Parameter(format!(
                "input_dim ({}) must be at least num_classes ({}) for simplex class means",
                self.input_dim, self.num_classes
            )));
        }
        if !(self.class_sigma > 0.0) {
            return Err(Error::Parameter("class_sigma must be positive".into()));
        }
        if self.real_base_count == 0 {
            return Err(Error::Parameter("real_base_count must be positive".into()));
        }
        if !(self.tail_exponent >= 0.0) {
            return Err(Error::Parameter("tail_exponent must be non-negative".into()));
        }
        if self.eval_size == 0 {
            return Err(Error::Parameter("eval_size must be positive".into()));
        }
        if self.noise_tiers.is_empty() {
            return Err(Error::Parameter("noise_tiers must be non-empty".into()));
        }
        if self.noise_tiers.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Parameter("noise tiers must be non-negative".into()));
        }
        if self.tier_weights.len() != self.noise_tiers.len() {
            return Err(Error::Parameter(format!(
                "tier_weights length {} does not match noise_tiers length {}",
                self.tier_weights.len(),
                self.noise_tiers.len()
            )));
        }
        if self.tier_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("tier weights must be non-negative".into()));
        }
        if self.tier_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Parameter("tier weights must sum to a positive value".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Parameter(format!(
                "corruption_rate must be in [0, 1], got {}",
                self.corruption_rate
            )));
        }
        Ok(())
    }

    fn class_counts(&self) -> Vec<usize> {
        (0..self.num_classes)
            .map(|c| {
                let scale = ((c + 1) as f64).powf(-self.tail_exponent);
                ((self.real_base_count as f64 * scale).round() as usize).max(1)
            })
            .collect()
    }
}

/// Unbounded source of generated samples with noisy features and labels.
///
/// Owns its RNG: single owner at a time, reseedable per logical worker.
#[derive(Debug, Clone)]
pub struct GeneratedStream {
    class_means: Vec<Vec<f64>>,
    class_sigma: f64,
    noise_tiers: Vec<f64>,
    tier_cumulative: Vec<f64>,
    corruption_rate: f64,
    scale_max: f64,
    round_robin: bool,
    next_round_robin: usize,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl GeneratedStream {
    fn new(config: &WorldConfig, class_means: Vec<Vec<f64>>, rng: ChaCha8Rng) -> Self {
        let total: f64 = config.tier_weights.iter().sum();
        let mut acc = 0.0;
        let tier_cumulative = config
            .tier_weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let scale_max = config.noise_tiers.iter().fold(0.0_f64, |m, t| m.max(*t));
        Self {
            class_means,
            class_sigma: config.class_sigma,
            noise_tiers: config.noise_tiers.clone(),
            tier_cumulative,
            corruption_rate: config.corruption_rate,
            scale_max,
            round_robin: config.round_robin,
            next_round_robin: 0,
            next_id: GENERATED_ID_BASE,
            rng,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn class_means(&self) -> &[Vec<f64>] {
        &self.class_means
    }

    pub fn noise_tiers(&self) -> &[f64] {
        &self.noise_tiers
    }

    /// Same stream parameters, fresh RNG and id counter.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut clone = self.clone();
        clone.rng = ChaCha8Rng::seed_from_u64(seed);
        clone.next_round_robin = 0;
        clone.next_id = GENERATED_ID_BASE;
        clone
    }

    /// Uniform draw of the per-iteration generated-sample count from `[0, k_max]`.
    pub fn draw_count(&mut self, k_max: u64) -> u64 {
        self.rng.random_range(0..=k_max)
    }

    /// Uniform index draw from the stream's RNG; used when drawing from a
    /// finite candidate pool in place of live samples.
    pub fn draw_index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }

    /// Draw `k` samples; `k == 0` yields the only permitted empty batch.
    pub fn sample(&mut self, k: u64) -> Batch {
        let samples = (0..k).map(|_| self.sample_one()).collect();
        Batch::from_samples(samples)
    }

    /// Draw one sample with class and tier chosen by the stream.
    pub fn sample_one(&mut self) -> LabeledSample {
        let class = self.next_class();
        let tier = self.next_tier();
        self.draw(class, tier)
    }

    /// Draw one sample at a forced noise tier, class chosen by the stream.
    pub fn sample_at_tier(&mut self, tier_index: usize) -> Result<LabeledSample> {
        self.check_tier(tier_index)?;
        let class = self.next_class();
        Ok(self.draw(class, tier_index))
    }

    /// Draw one sample with both class and tier forced.
    pub fn sample_forced(&mut self, class: usize, tier_index: usize) -> Result<LabeledSample> {
        if class >= self.class_means.len() {
            return Err(Error::Parameter(format!(
                "class {class} out of range (num_classes {})",
                self.class_means.len()
            )));
        }
        self.check_tier(tier_index)?;
        Ok(self.draw(class, tier_index))
    }

    fn check_tier(&self, tier_index: usize) -> Result<()> {
        if tier_index >= self.noise_tiers.len() {
            return Err(Error::Parameter(format!(
                "tier index {tier_index} out of range ({} tiers)",
                self.noise_tiers.len()
            )));
        }
        Ok(())
    }

    fn next_class(&mut self) -> usize {
        if self.round_robin {
            let class = self.next_round_robin;
            self.next_round_robin = (self.next_round_robin + 1) % self.class_means.len();
            class
        } else {
            self.rng.random_range(0..self.class_means.len())
        }
    }

    fn next_tier(&mut self) -> usize {
        let u: f64 = self.rng.random();
        self.tier_cumulative
            .iter()
            .position(|c| u <= *c)
            .unwrap_or(self.noise_tiers.len() - 1)
    }

    fn draw(&mut self, class: usize, tier_index: usize) -> LabeledSample {
        let dim = self.class_means[class].len();
        let mut features: Vec<f64> = (0..dim)
            .map(|i| {
                let z: f64 = self.rng.sample(StandardNormal);
                self.class_means[class][i] + self.class_sigma * z
            })
            .collect();
        let scale = self.noise_tiers[tier_index];
        if scale > 0.0 {
            for f in &mut features {
                let z: f64 = self.rng.sample(StandardNormal);
                *f += scale * z;
            }
        }
        let mut label = class;
        if self.scale_max > 0.0 {
            let flip_prob = self.corruption_rate * scale / self.scale_max;
            if flip_prob > 0.0 && self.rng.random::<f64>() < flip_prob {
                let num_classes = self.class_means.len();
                let r = self.rng.random_range(0..num_classes - 1);
                label = if r >= class { r + 1 } else { r };
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        LabeledSample {
            id,
            features,
            label,
            origin: Origin::Generated,
            noise_scale: scale,
        }
    }
}

/// Strategy for sampling the per-iteration test batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Uniform over classes, then uniform within the class.
    AllClasses,
    /// Uniform over the classes present in the generated batch, then uniform
    /// within the class.
    PastedClasses,
    /// Uniform over all samples.
    AllImages,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::AllClasses => "all_classes",
            SamplingStrategy::PastedClasses => "pasted_classes",
            SamplingStrategy::AllImages => "all_images",
        }
    }
}

/// Class means at the vertices of a randomly rotated unit-norm regular
/// simplex: pairwise distance sqrt(2 + 2/(C-1)), the maximum achievable for
/// C unit vectors.
fn build_class_means(num_classes: usize, input_dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let c = num_classes as f64;
    let mut means: Vec<Vec<f64>> = (0..num_classes)
        .map(|i| {
            let mut v = vec![0.0; input_dim];
            for (j, entry) in v.iter_mut().enumerate().take(num_classes) {
                *entry = if i == j { 1.0 - 1.0 / c } else { -1.0 / c };
            }
            v
        })
        .collect();
    // Random orientation via a few Householder reflections (exactly orthogonal,
    // so pairwise geometry is preserved).
    for _ in 0..3 {
        let mut u: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        for x in &mut u {
            *x /= norm;
        }
        for mean in &mut means {
            let proj: f64 = mean.iter().zip(&u).map(|(m, ui)| m * ui).sum();
            for (m, ui) in mean.iter_mut().zip(&u) {
                *m -= 2.0 * proj * ui;
            }
        }
    }
    for mean in &mut means {
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in mean.iter_mut() {
            *x /= norm;
        }
    }
    means
}

/// Build the data world: real dataset, generated stream, held-out eval set.
///
/// The eval set is pristine, class-balanced, and id-disjoint from the real
/// dataset.
pub fn make_world(config: &WorldConfig) -> Result<(RealDataset, GeneratedStream, EvalSet)> {
    config.validate()?;
    let mut means_rng = stream_rng(config.seed, "world-means", 0);
    let class_means = build_class_means(config.num_classes, config.input_dim, &mut means_rng);

    let gaussian = |rng: &mut ChaCha8Rng, class: usize| -> Vec<f64> {
        (0..config.input_dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                class_means[class][i] + config.class_sigma * z
            })
            .collect()
    };

    let counts = config.class_counts();
    let mut real_rng = stream_rng(config.seed, "world-real", 0);
    let mut samples = Vec::with_capacity(counts.iter().sum());
    let mut next_id = 0u64;
    for (class, count) in counts.iter().enumerate() {
        for _ in 0..*count {
            samples.push(LabeledSample {
                id: next_id,
                features: gaussian(&mut real_rng, class),
                label: class,
                origin: Origin::Real,
                noise_scale: 0.0,
            });
            next_id += 1;
        }
    }
    let by_class = (0..config.num_classes)
        .map(|c| {
            samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.label == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let frequency_tiers = counts.iter().map(|c| FrequencyTier::from_count(*c)).collect();
    let dataset = RealDataset {
        samples,
        class_counts: counts,
        frequency_tiers,
        by_class,
    };

    let mut eval_rng = stream_rng(config.seed, "world-eval", 0);
    let per_class = config.eval_size / config.num_classes;
    let remainder = config.eval_size % config.num_classes;
    let mut eval_samples = Vec::with_capacity(config.eval_size);
    for class in 0..config.num_classes {
        let count = per_class + usize::from(class < remainder);
        for _ in 0..count {
            eval_samples.push(LabeledSample {
                id: next_id,
                features: gaussian(&mut eval_rng, class),
                label: class,
                origin: Origin::Real,
                noise_scale: 0.0,
            });
            next_id += 1;
        }
    }
    let eval = EvalSet::new(eval_samples);

    let stream_rng_state = stream_rng(config.seed, "world-stream", 0);
    let stream = GeneratedStream::new(config, class_means, stream_rng_state);

    Ok((dataset, stream, eval))
}

/// Uniform sample of `size` distinct dataset entries, in random order.
pub fn sample_real_batch(dataset: &RealDataset, size: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if size > dataset.len() {
        return Err(Error::Parameter(format!(
            "batch size {size} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let indices = rand::seq::index::sample(rng, dataset.len(), size);
    let samples = indices.iter().map(|i| dataset.samples[i].clone()).collect();
    Ok(Batch::from_samples(samples))
}

/// Draw `k` samples from the generated stream.
pub fn sample_generated(stream: &mut GeneratedStream, k: u64) -> Batch {
    stream.sample(k)
}

/// Append-mode augmentation: `real` followed by `gen`, order and origins
/// preserved. Under sum-loss this makes the augmented loss exactly
/// `loss(real) + loss(gen)`.
pub fn augment(real: &Batch, gen: &Batch) -> Result<Batch> {
    if real.is_empty() {
        return Err(Error::Parameter("real batch must be non-empty".into()));
    }
    let mut samples = real.samples.clone();
    samples.extend(gen.samples.iter().cloned());
    Ok(Batch::from_samples(samples))
}

/// Sample the test batch used for contribution estimation.
pub fn sample_test_batch(
    dataset: &RealDataset,
    strategy: SamplingStrategy,
    gen_classes: &BTreeSet<usize>,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if size == 0 {
        return Err(Error::Parameter("test batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Parameter("dataset is empty".into()));
    }
    let pick_in_class = |class: usize, rng: &mut ChaCha8Rng| -> LabeledSample {
        let indices = dataset.class_indices(class);
        let i = indices[rng.random_range(0..indices.len())];
        dataset.samples[i].clone()
    };
    let samples: Vec<LabeledSample> = match strategy {
        SamplingStrategy::AllClasses => (0..size)
            .map(|_| {
                let class = rng.random_range(0..dataset.num_classes());
                pick_in_class(class, rng)
            })
            .collect(),
        SamplingStrategy::PastedClasses => {
            if gen_classes.is_empty() {
                return Err(Error::Parameter(
                    "pasted_classes sampling requires a non-empty generated class set".into(),
                ));
            }
            if let Some(bad) = gen_classes.iter().find(|c| **c >= dataset.num_classes()) {
                return Err(Error::Parameter(format!(
                    "generated class {bad} out of range ({} classes)",
                    dataset.num_classes()
                )));
            }
            let classes: Vec<usize> = gen_classes.iter().copied().collect();
            (0..size)
                .map(|_| {
                    let class = classes[rng.random_range(0..classes.len())];
                    pick_in_class(class, rng)
                })
                .collect()
        }
        SamplingStrategy::AllImages => (0..size)
            .map(|_| dataset.samples[rng.random_range(0..dataset.len())].clone())
            .collect(),
    };
    Ok(Batch::from_samples(samples))
}
