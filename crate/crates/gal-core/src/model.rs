//! Small multi-class classifier: one tanh hidden layer over a flat parameter
//! vector, softmax cross-entropy summed over samples, and an optional
//! prediction-entropy auxiliary component.
//!
//! Losses are SUMS over samples, not means. That makes the append-mode
//! identity `loss(real ++ gen) == loss(real) + loss(gen)` exact, which the
//! generated-only gradient shortcut relies on.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastream::{Batch, EvalSet, LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::numerics::{GradientVector, ParameterVector};

/// Weight of the auxiliary prediction-entropy component.
pub const AUX_WEIGHT: f64 = 0.01;

/// Classifier shape and initialization seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dim: 64,
            num_classes: 16,
            seed: 7,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Parameter("num_classes must be at least 2".into()));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Parameter("model dimensions must be at least 1".into()));
        }
        Ok(())
    }

    /// Total parameter count: hidden layer weights+biases, output weights+biases.
    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim
            + self.hidden_dim
            + self.num_classes * self.hidden_dim
            + self.num_classes
    }
}

/// Which loss components participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LossSelector {
    pub cls: bool,
    pub aux: bool,
}

impl LossSelector {
    pub fn cls_only() -> Self {
        Self { cls: true, aux: false }
    }

    pub fn all() -> Self {
        Self { cls: true, aux: true }
    }

    pub fn new(cls: bool, aux: bool) -> Result<Self> {
        if !cls && !aux {
            return Err(Error::Parameter("loss selector must include at least one component".into()));
        }
        Ok(Self { cls, aux })
    }
}

impl TryFrom<Vec<String>> for LossSelector {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        let mut cls = false;
        let mut aux = false;
        for name in &names {
            match name.as_str() {
                "cls" => cls = true,
                "aux" => aux = true,
                other => {
                    return Err(Error::Parameter(format!(
                        "unknown loss component {other:?}; expected \"cls\" or \"aux\""
                    )))
                }
            }
        }
        LossSelector::new(cls, aux)
    }
}

impl From<LossSelector> for Vec<String> {
    fn from(sel: LossSelector) -> Vec<String> {
        let mut names = Vec::new();
        if sel.cls {
            names.push("cls".to_string());
        }
        if sel.aux {
            names.push("aux".to_string());
        }
        names
    }
}

/// Loss of one sample within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleLoss {
    pub index: usize,
    pub origin: Origin,
    pub value: f64,
}

/// Batch loss with per-sample and per-component detail.
///
/// `total` equals the sum of `per_sample` values and the sum of
/// `by_component` values; each per-sample value already includes every
/// selected component.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_sample: Vec<PerSampleLoss>,
    pub by_component: BTreeMap<String, f64>,
}

/// The classifier: configuration plus the flat-parameter layout.
#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: ClassifierConfig,
    off_b1: usize,
    off_w2: usize,
    off_b2: usize,
    param_count: usize,
}

struct SampleForward {
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let off_b1 = cfg.hidden_dim * cfg.input_dim;
        let off_w2 = off_b1 + cfg.hidden_dim;
        let off_b2 = off_w2 + cfg.num_classes * cfg.hidden_dim;
        let param_count = off_b2 + cfg.num_classes;
        Ok(Self { cfg, off_b1, off_w2, off_b2, param_count })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Deterministic initialization: weights zero-mean normal with scale
    /// 1/sqrt(fan_in), biases zero.
    pub fn init_params(&self) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut values = vec![0.0; self.param_count];
        let w1_scale = 1.0 / (self.cfg.input_dim as f64).sqrt();
        for v in values.iter_mut().take(self.off_b1) {
            let z: f64 = rng.sample(StandardNormal);
            *v = w1_scale * z;
        }
        let w2_scale = 1.0 / (self.cfg.hidden_dim as f64).sqrt();
        for v in values.iter_mut().take(self.off_b2).skip(self.off_w2) {
            let z: f64 = rng.sample(StandardNormal);
            *v = w2_scale * z;
        }
        ParameterVector::new(values).expect("finite init")
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Dimension {
                expected: self.param_count,
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_sample(&self, sample: &LabeledSample) -> Result<()> {
        if sample.features.len() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "sample {} has {} features, model expects {}",
                sample.id,
                sample.features.len(),
                self.cfg.input_dim
            )));
        }
        if sample.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Numeric(format!("sample {} has non-finite features", sample.id)));
        }
        if sample.label >= self.cfg.num_classes {
            return Err(Error::Shape(format!(
                "sample {} label {} out of range ({} classes)",
                sample.id, sample.label, self.cfg.num_classes
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, params: &[f64], features: &[f64]) -> SampleForward {
        let (input, hidden_dim, classes) =
            (self.cfg.input_dim, self.cfg.hidden_dim, self.cfg.num_classes);
        let mut hidden = vec![0.0; hidden_dim];
        for j in 0..hidden_dim {
            let mut a = params[self.off_b1 + j];
            let row = &params[j * input..(j + 1) * input];
            for i in 0..input {
                a += row[i] * features[i];
            }
            hidden[j] = a.tanh();
        }
        let mut logits = vec![0.0; classes];
        for c in 0..classes {
            let mut z = params[self.off_b2 + c];
            let row = &params[self.off_w2 + c * hidden_dim..self.off_w2 + (c + 1) * hidden_dim];
            for j in 0..hidden_dim {
                z += row[j] * hidden[j];
            }
            logits[c] = z;
        }
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, z| m.max(*z));
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        SampleForward { hidden, log_probs, probs }
    }

    /// Class logits for one sample (used for predictions).
    pub fn log_probs(&self, params: &ParameterVector, sample: &LabeledSample) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_sample(sample)?;
        Ok(self.forward_sample(params.as_slice(), &sample.features).log_probs)
    }

    /// Sum-over-samples loss of the selected components.
    pub fn forward_loss(
        &self,
        params: &ParameterVector,
        batch: &Batch,
        selector: LossSelector,
    ) -> Result<LossBreakdown> {
        self.forward_backward_impl(params, batch, selector, false)
            .map(|(loss, _)| loss)
    }

    /// Exact gradient of the selected loss components.
    pub fn backward(
        &self,
        params: &ParameterVector,
        batch: &Batch,
        selector: LossSelector,
    ) -> Result<GradientVector> {
        self.forward_backward_impl(params, batch, selector, true)
            .map(|(_, grad)| grad.expect("gradient requested"))
    }

    /// One pass computing both the loss breakdown and its gradient.
    pub fn forward_backward(
        &self,
        params: &ParameterVector,
        batch: &Batch,
        selector: LossSelector,
    ) -> Result<(LossBreakdown, GradientVector)> {
        self.forward_backward_impl(params, batch, selector, true)
            .map(|(loss, grad)| (loss, grad.expect("gradient requested")))
    }

    fn forward_backward_impl(
        &self,
        params: &ParameterVector,
        batch: &Batch,
        selector: LossSelector,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<GradientVector>)> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(Error::Parameter("batch must be non-empty".into()));
        }
        let p = params.as_slice();
        let (input, hidden_dim, classes) =
            (self.cfg.input_dim, self.cfg.hidden_dim, self.cfg.num_classes);

        let mut total = 0.0;
        let mut cls_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut per_sample = Vec::with_capacity(batch.len());
        let mut grad = if want_grad { vec![0.0; self.param_count] } else { Vec::new() };

        for (index, sample) in batch.samples().iter().enumerate() {
            self.check_sample(sample)?;
            let fwd = self.forward_sample(p, &sample.features);
            let entropy = -fwd
                .probs
                .iter()
                .zip(&fwd.log_probs)
                .map(|(prob, lp)| prob * lp)
                .sum::<f64>();

            let mut value = 0.0;
            if selector.cls {
                let cls = -fwd.log_probs[sample.label];
                cls_sum += cls;
                value += cls;
            }
            if selector.aux {
                let aux = AUX_WEIGHT * entropy;
                aux_sum += aux;
                value += aux;
            }
            total += value;
            per_sample.push(PerSampleLoss { index, origin: sample.origin, value });

            if want_grad {
                // d(loss)/d(logit_c), summed over selected components.
                let mut dz = vec![0.0; classes];
                for c in 0..classes {
                    if selector.cls {
                        dz[c] += fwd.probs[c] - f64::from(c == sample.label);
                    }
                    if selector.aux {
                        dz[c] += AUX_WEIGHT * (-fwd.probs[c] * (fwd.log_probs[c] + entropy));
                    }
                }
                let mut dh = vec![0.0; hidden_dim];
                for c in 0..classes {
                    let w2_row =
                        &p[self.off_w2 + c * hidden_dim..self.off_w2 + (c + 1) * hidden_dim];
                    let g_w2 =
                        &mut grad[self.off_w2 + c * hidden_dim..self.off_w2 + (c + 1) * hidden_dim];
                    for j in 0..hidden_dim {
                        g_w2[j] += dz[c] * fwd.hidden[j];
                        dh[j] += w2_row[j] * dz[c];
                    }
                    grad[self.off_b2 + c] += dz[c];
                }
                for j in 0..hidden_dim {
                    let da = dh[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                    let g_w1 = &mut grad[j * input..(j + 1) * input];
                    for i in 0..input {
                        g_w1[i] += da * sample.features[i];
                    }
                    grad[self.off_b1 + j] += da;
                }
            }
        }

        let mut by_component = BTreeMap::new();
        if selector.cls {
            by_component.insert("cls".to_string(), cls_sum);
        }
        if selector.aux {
            by_component.insert("aux".to_string(), aux_sum);
        }
        let breakdown = LossBreakdown { total, per_sample, by_component };
        let grad = if want_grad {
            Some(GradientVector::new(grad).map_err(|_| {
                Error::Numeric("gradient accumulation produced non-finite values".into())
            })?)
        } else {
            None
        };
        Ok((breakdown, grad))
    }

    /// Fraction of argmax-correct predictions; ties break toward the lowest
    /// class index.
    pub fn accuracy(&self, params: &ParameterVector, dataset: &EvalSet) -> Result<f64> {
        self.accuracy_on(params, dataset.samples())
    }

    /// Accuracy over an arbitrary slice of samples.
    pub fn accuracy_on(&self, params: &ParameterVector, samples: &[LabeledSample]) -> Result<f64> {
        self.check_params(params)?;
        if samples.is_empty() {
            return Err(Error::Parameter("evaluation set must be non-empty".into()));
        }
        let p = params.as_slice();
        let mut correct = 0usize;
        for sample in samples {
            self.check_sample(sample)?;
            let fwd = self.forward_sample(p, &sample.features);
            let mut best = 0usize;
            for c in 1..self.cfg.num_classes {
                if fwd.log_probs[c] > fwd.log_probs[best] {
                    best = c;
                }
            }
            if best == sample.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Pure SGD step: `params - lr * grad`. Inputs are untouched.
pub fn sgd_step(params: &ParameterVector, grad: &GradientVector, lr: f64) -> Result<ParameterVector> {
    if !(lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grad.len() {
        return Err(Error::Dimension { expected: params.len(), got: grad.len() });
    }
    let values = params
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(p, g)| p - lr * g)
        .collect();
    ParameterVector::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, finite_difference_gradient};
    use rand::Rng;

    fn sample(features: &[f64], label: usize) -> LabeledSample {
        LabeledSample {
            id: 0,
            features: features.to_vec(),
            label,
            origin: Origin::Real,
            noise_scale: 0.0,
        }
    }

    fn random_sample(rng: &mut ChaCha8Rng, dim: usize, classes: usize, id: u64) -> LabeledSample {
        LabeledSample {
            id,
            features: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            label: rng.random_range(0..classes),
            origin: if rng.random::<f64>() < 0.5 { Origin::Real } else { Origin::Generated },
            noise_scale: 0.0,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, cfg: &ClassifierConfig, n: usize) -> Batch {
        Batch::from_samples(
            (0..n)
                .map(|i| random_sample(rng, cfg.input_dim, cfg.num_classes, i as u64))
                .collect(),
        )
    }

    fn random_params(rng: &mut ChaCha8Rng, model: &Classifier) -> ParameterVector {
        ParameterVector::new(
            (0..model.param_count())
                .map(|_| rng.random_range(-0.8..0.8))
                .collect(),
        )
        .unwrap()
    }

    /// Independent scalar reimplementation of the selected loss: naive
    /// softmax without the log-sum-exp shift, straight from definitions.
    fn naive_loss(model: &Classifier, params: &ParameterVector, batch: &Batch, sel: LossSelector) -> f64 {
        let cfg = model.config().clone();
        let p = params.as_slice();
        let off_b1 = cfg.hidden_dim * cfg.input_dim;
        let off_w2 = off_b1 + cfg.hidden_dim;
        let off_b2 = off_w2 + cfg.num_classes * cfg.hidden_dim;
        let mut total = 0.0;
        for s in batch.samples() {
            let h: Vec<f64> = (0..cfg.hidden_dim)
                .map(|j| {
                    let mut a = p[off_b1 + j];
                    for i in 0..cfg.input_dim {
                        a += p[j * cfg.input_dim + i] * s.features[i];
                    }
                    a.tanh()
                })
                .collect();
            let z: Vec<f64> = (0..cfg.num_classes)
                .map(|c| {
                    let mut v = p[off_b2 + c];
                    for j in 0..cfg.hidden_dim {
                        v += p[off_w2 + c * cfg.hidden_dim + j] * h[j];
                    }
                    v
                })
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            let probs: Vec<f64> = z.iter().map(|v| v.exp() / denom).collect();
            if sel.cls {
                total += -probs[s.label].ln();
            }
            if sel.aux {
                total += AUX_WEIGHT * -probs.iter().map(|q| q * q.ln()).sum::<f64>();
            }
        }
        total
    }

    #[test]
    fn param_count_arithmetic() {
        let cfg = ClassifierConfig { input_dim: 1, hidden_dim: 1, num_classes: 2, seed: 0 };
        assert_eq!(cfg.param_count(), 6);
        assert_eq!(Classifier::new(cfg).unwrap().param_count(), 6);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = ClassifierConfig::default();
        let model = Classifier::new(cfg.clone()).unwrap();
        assert_eq!(model.init_params(), model.init_params());
        let other = Classifier::new(ClassifierConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
        assert_ne!(model.init_params(), other.init_params());
    }

    #[test]
    fn init_biases_zero() {
        let cfg = ClassifierConfig { input_dim: 3, hidden_dim: 4, num_classes: 3, seed: 2 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = model.init_params();
        let v = params.as_slice();
        let off_b1 = cfg.hidden_dim * cfg.input_dim;
        assert!(v[off_b1..off_b1 + cfg.hidden_dim].iter().all(|b| *b == 0.0));
        assert!(v[v.len() - cfg.num_classes..].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let cfg = ClassifierConfig { input_dim: 2, hidden_dim: 3, num_classes: 4, seed: 0 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = ParameterVector::zeros(cfg.param_count());
        let batch = Batch::from_samples(vec![sample(&[0.4, -0.2], 1)]);
        let loss = model.forward_loss(&params, &batch, LossSelector::cls_only()).unwrap();
        assert!((loss.total - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_additive_over_identical_samples() {
        let cfg = ClassifierConfig { input_dim: 3, hidden_dim: 4, num_classes: 3, seed: 5 };
        let model = Classifier::new(cfg).unwrap();
        let params = model.init_params();
        let s = sample(&[0.2, -0.7, 1.1], 2);
        let single = Batch::from_samples(vec![s.clone()]);
        let double = Batch::from_samples(vec![s.clone(), s]);
        let l1 = model.forward_loss(&params, &single, LossSelector::all()).unwrap();
        let l2 = model.forward_loss(&params, &double, LossSelector::all()).unwrap();
        assert!((l2.total - 2.0 * l1.total).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_independent_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cfg = ClassifierConfig { input_dim: 5, hidden_dim: 6, num_classes: 4, seed: 1 };
        let model = Classifier::new(cfg.clone()).unwrap();
        for sel in [LossSelector::cls_only(), LossSelector::all()] {
            let params = random_params(&mut rng, &model);
            let batch = random_batch(&mut rng, &cfg, 7);
            let got = model.forward_loss(&params, &batch, sel).unwrap();
            let want = naive_loss(&model, &params, &batch, sel);
            assert!((got.total - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn breakdown_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let cfg = ClassifierConfig { input_dim: 4, hidden_dim: 5, num_classes: 3, seed: 1 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = random_params(&mut rng, &model);
        let batch = random_batch(&mut rng, &cfg, 6);
        let loss = model.forward_loss(&params, &batch, LossSelector::all()).unwrap();
        let per_sample_sum: f64 = loss.per_sample.iter().map(|p| p.value).sum();
        let component_sum: f64 = loss.by_component.values().sum();
        assert!((loss.total - per_sample_sum).abs() < 1e-10);
        assert!((loss.total - component_sum).abs() < 1e-10);
        assert_eq!(loss.per_sample.len(), batch.len());
    }

    #[test]
    fn selector_components_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let cfg = ClassifierConfig { input_dim: 4, hidden_dim: 3, num_classes: 5, seed: 2 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = random_params(&mut rng, &model);
        let batch = random_batch(&mut rng, &cfg, 5);
        let cls = model
            .forward_loss(&params, &batch, LossSelector::cls_only())
            .unwrap();
        let aux = model
            .forward_loss(&params, &batch, LossSelector::new(false, true).unwrap())
            .unwrap();
        let all = model.forward_loss(&params, &batch, LossSelector::all()).unwrap();
        assert!((cls.by_component["cls"] - all.by_component["cls"]).abs() < 1e-12);
        assert!((aux.by_component["aux"] - all.by_component["aux"]).abs() < 1e-12);
        assert!((cls.total + aux.total - all.total).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        for sel in [LossSelector::cls_only(), LossSelector::all()] {
            let cfg = ClassifierConfig { input_dim: 4, hidden_dim: 5, num_classes: 3, seed: 3 };
            let model = Classifier::new(cfg.clone()).unwrap();
            let params = random_params(&mut rng, &model);
            let batch = random_batch(&mut rng, &cfg, 4);
            let analytic = model.backward(&params, &batch, sel).unwrap();
            let fd = finite_difference_gradient(
                |theta| model.forward_loss(theta, &batch, sel).unwrap().total,
                &params,
                1e-5,
            )
            .unwrap();
            let err = analytic.sub(&fd).unwrap().l2_norm() / fd.l2_norm().max(1e-12);
            assert!(err < 1e-6, "relative gradient error {err}");
        }
    }

    #[test]
    fn saturated_correct_predictions_have_tiny_gradient() {
        let cfg = ClassifierConfig { input_dim: 1, hidden_dim: 1, num_classes: 2, seed: 0 };
        let model = Classifier::new(cfg.clone()).unwrap();
        // w1 = 0, b1 = 0 (hidden = 0), w2 = 0, b2 = [50, -50]: class 0 is
        // predicted with probability ~1 regardless of input.
        let params = ParameterVector::new(vec![0.0, 0.0, 0.0, 0.0, 50.0, -50.0]).unwrap();
        let batch = Batch::from_samples(vec![sample(&[0.3], 0), sample(&[-1.2], 0)]);
        let grad = model.backward(&params, &batch, LossSelector::cls_only()).unwrap();
        assert!(grad.l2_norm() < 1e-6, "gradient norm {}", grad.l2_norm());
    }

    #[test]
    fn gradient_additive_over_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = ClassifierConfig { input_dim: 3, hidden_dim: 4, num_classes: 3, seed: 4 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = random_params(&mut rng, &model);
        let a = random_batch(&mut rng, &cfg, 3);
        let b = random_batch(&mut rng, &cfg, 2);
        let mut merged = a.samples().to_vec();
        merged.extend(b.samples().iter().cloned());
        let g_union = model
            .backward(&params, &Batch::from_samples(merged), LossSelector::all())
            .unwrap();
        let g_sum = model
            .backward(&params, &a, LossSelector::all())
            .unwrap()
            .add(&model.backward(&params, &b, LossSelector::all()).unwrap())
            .unwrap();
        assert!(g_union.sub(&g_sum).unwrap().linf_norm() < 1e-12);
    }

    #[test]
    fn sgd_step_hand_arithmetic_and_purity() {
        let params = ParameterVector::new(vec![1.0, 1.0]).unwrap();
        let grad = GradientVector::new(vec![2.0, -2.0]).unwrap();
        let before = params.clone();
        let stepped = sgd_step(&params, &grad, 0.5).unwrap();
        assert_eq!(stepped.as_slice(), &[0.0, 2.0]);
        assert_eq!(params, before);

        let zero = GradientVector::zeros(2);
        assert_eq!(sgd_step(&params, &zero, 1.0).unwrap(), params);
        assert!(sgd_step(&params, &grad, 0.0).is_err());
        assert!(sgd_step(&params, &GradientVector::zeros(3), 0.1).is_err());
    }

    #[test]
    fn two_steps_match_manual_relinearization() {
        let params = ParameterVector::new(vec![0.5, -1.0, 2.0]).unwrap();
        let g1 = GradientVector::new(vec![1.0, 0.5, -0.25]).unwrap();
        let g2 = GradientVector::new(vec![-2.0, 4.0, 0.0]).unwrap();
        let (a, b) = (0.1, 0.05);
        let stepped = sgd_step(&sgd_step(&params, &g1, a).unwrap(), &g2, b).unwrap();
        let manual: Vec<f64> = params
            .as_slice()
            .iter()
            .zip(g1.as_slice())
            .zip(g2.as_slice())
            .map(|((p, x), y)| p - a * x - b * y)
            .collect();
        for (got, want) in stepped.as_slice().iter().zip(&manual) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn accuracy_tie_breaks_toward_class_zero() {
        let cfg = ClassifierConfig { input_dim: 2, hidden_dim: 2, num_classes: 4, seed: 0 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = ParameterVector::zeros(cfg.param_count());
        let zeros = EvalSet::new(vec![sample(&[0.1, 0.2], 0), sample(&[-0.5, 0.9], 0)]);
        assert_eq!(model.accuracy(&params, &zeros).unwrap(), 1.0);
        let ones = EvalSet::new(vec![sample(&[0.1, 0.2], 1)]);
        assert_eq!(model.accuracy(&params, &ones).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_on_own_predictions_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let cfg = ClassifierConfig::default();
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = model.init_params();
        let relabeled: Vec<LabeledSample> = (0..50)
            .map(|i| {
                let mut s = random_sample(&mut rng, cfg.input_dim, cfg.num_classes, i);
                let lp = model.log_probs(&params, &s).unwrap();
                let mut best = 0;
                for c in 1..cfg.num_classes {
                    if lp[c] > lp[best] {
                        best = c;
                    }
                }
                s.label = best;
                s
            })
            .collect();
        assert_eq!(model.accuracy(&params, &EvalSet::new(relabeled)).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_matches_manual_confusion_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = ClassifierConfig { input_dim: 6, hidden_dim: 8, num_classes: 5, seed: 6 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = random_params(&mut rng, &model);
        let samples: Vec<LabeledSample> = (0..200)
            .map(|i| random_sample(&mut rng, cfg.input_dim, cfg.num_classes, i))
            .collect();
        let mut correct = 0usize;
        for s in &samples {
            let lp = model.log_probs(&params, s).unwrap();
            let mut best = 0;
            for c in 1..cfg.num_classes {
                if lp[c] > lp[best] {
                    best = c;
                }
            }
            if best == s.label {
                correct += 1;
            }
        }
        let got = model.accuracy(&params, &EvalSet::new(samples)).unwrap();
        assert_eq!(got, correct as f64 / 200.0);
    }

    #[test]
    fn shape_and_domain_errors() {
        let cfg = ClassifierConfig { input_dim: 2, hidden_dim: 2, num_classes: 2, seed: 0 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = model.init_params();
        let bad_dim = Batch::from_samples(vec![sample(&[1.0], 0)]);
        assert!(matches!(
            model.forward_loss(&params, &bad_dim, LossSelector::all()).unwrap_err(),
            Error::Shape(_)
        ));
        let bad_feat = Batch::from_samples(vec![sample(&[1.0, f64::NAN], 0)]);
        assert!(matches!(
            model.forward_loss(&params, &bad_feat, LossSelector::all()).unwrap_err(),
            Error::Numeric(_)
        ));
        assert!(model
            .forward_loss(&params, &Batch::default(), LossSelector::all())
            .is_err());
        assert!(LossSelector::new(false, false).is_err());
    }

    #[test]
    fn estimation_gradients_align_with_loss_change() {
        // Sanity: a small step along -gradient must reduce the loss.
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let cfg = ClassifierConfig { input_dim: 4, hidden_dim: 6, num_classes: 3, seed: 9 };
        let model = Classifier::new(cfg.clone()).unwrap();
        let params = random_params(&mut rng, &model);
        let batch = random_batch(&mut rng, &cfg, 8);
        let sel = LossSelector::all();
        let (loss, grad) = model.forward_backward(&params, &batch, sel).unwrap();
        let stepped = sgd_step(&params, &grad, 1e-3).unwrap();
        let after = model.forward_loss(&stepped, &batch, sel).unwrap();
        assert!(after.total < loss.total);
        assert!(dot(&grad, &grad).unwrap() > 0.0);
    }
}
