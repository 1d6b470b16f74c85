//! Flat-vector numerical kernel.
//!
//! Everything downstream — losses, gradients, contribution scores — lives in
//! flat `f64` vectors over the model's parameter space. Dot products use a
//! fixed ascending-index summation so that repeated runs are bit-reproducible.

use crate::error::{Error, Result};

/// Norms below this are treated as zero when normalizing (cosine returns 0).
pub const EPS_NORM: f64 = 1e-12;

/// Flat vector of model parameters. All entries finite, length fixed per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
}

/// Flat gradient over the same parameter space as [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what} has non-finite entry {} at index {i}",
            values[i]
        )));
    }
    Ok(())
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "parameter vector")?;
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "gradient vector")?;
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &GradientVector) -> Result<GradientVector> {
        check_same_len(self.len(), other.len())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(GradientVector { values })
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &GradientVector) -> Result<GradientVector> {
        check_same_len(self.len(), other.len())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(GradientVector { values })
    }

    pub fn scale(&self, factor: f64) -> GradientVector {
        GradientVector {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

/// Inner product with fixed ascending-index summation order.
pub fn dot(a: &GradientVector, b: &GradientVector) -> Result<f64> {
    check_same_len(a.len(), b.len())?;
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a.values[i] * b.values[i];
    }
    Ok(acc)
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// When either norm is below [`EPS_NORM`] there is no directional evidence
/// and the result is 0 by convention.
pub fn cosine(a: &GradientVector, b: &GradientVector) -> Result<f64> {
    let num = dot(a, b)?;
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na < EPS_NORM || nb < EPS_NORM {
        return Ok(0.0);
    }
    Ok((num / (na * nb)).clamp(-1.0, 1.0))
}

/// Exponentially weighted update: `beta * cache + (1 - beta) * new`.
pub fn ema_update(cache: &GradientVector, new: &GradientVector, beta: f64) -> Result<GradientVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!("beta must be in [0, 1], got {beta}")));
    }
    check_same_len(cache.len(), new.len())?;
    let values = cache
        .values
        .iter()
        .zip(&new.values)
        .map(|(c, n)| beta * c + (1.0 - beta) * n)
        .collect();
    Ok(GradientVector { values })
}

/// Central-difference gradient of `loss_fn` at `params`. Test oracle for
/// analytic backprop; O(2P) loss evaluations.
pub fn finite_difference_gradient<F>(
    loss_fn: F,
    params: &ParameterVector,
    h: f64,
) -> Result<GradientVector>
where
    F: Fn(&ParameterVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step h must be positive, got {h}")));
    }
    let mut theta = params.clone();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = theta.values[i];
        theta.values[i] = orig + h;
        let up = loss_fn(&theta);
        theta.values[i] = orig - h;
        let down = loss_fn(&theta);
        theta.values[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "loss evaluation non-finite at coordinate {i}: {up}, {down}"
            )));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(GradientVector { values: grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gv(values: &[f64]) -> GradientVector {
        GradientVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn dot_hand_arithmetic() {
        assert_eq!(dot(&gv(&[1.0, 2.0, 3.0]), &gv(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
    }

    #[test]
    fn dot_zero_annihilates() {
        let v = gv(&[0.3, -7.0, 2.5]);
        assert_eq!(dot(&v, &GradientVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn dot_matches_independent_summation() {
        // Independent check: descending-index Kahan summation of the products.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut sum, mut c) = (0.0_f64, 0.0_f64);
        for i in (0..50).rev() {
            let y = a[i] * b[i] - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        let got = dot(&gv(&a), &gv(&b)).unwrap();
        assert!((got - sum).abs() <= 1e-12 * sum.abs().max(1.0), "{got} vs {sum}");
    }

    #[test]
    fn dot_length_mismatch_errors() {
        let err = dot(&gv(&[1.0]), &gv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 1, got: 2 }));
    }

    #[test]
    fn cosine_self_antipodal_degenerate() {
        let v = gv(&[3.0, -4.0]);
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&v, &v.scale(-1.0)).unwrap(), -1.0);
        assert_eq!(cosine(&v, &GradientVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn ema_update_endpoints_and_midpoint() {
        let c = gv(&[2.0, 2.0]);
        let n = gv(&[0.0, 4.0]);
        assert_eq!(ema_update(&c, &n, 0.0).unwrap(), n);
        assert_eq!(ema_update(&c, &n, 1.0).unwrap(), c);
        assert_eq!(ema_update(&c, &n, 0.5).unwrap(), gv(&[1.0, 3.0]));
        assert!(matches!(
            ema_update(&c, &n, 1.5).unwrap_err(),
            Error::Parameter(_)
        ));
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let params = ParameterVector::new(vec![1.0, -2.0]).unwrap();
        let grad = finite_difference_gradient(
            |p| p.as_slice().iter().map(|x| x * x).sum(),
            &params,
            1e-5,
        )
        .unwrap();
        assert!((grad.as_slice()[0] - 2.0).abs() < 1e-8);
        assert!((grad.as_slice()[1] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_constant_loss_is_zero() {
        let params = ParameterVector::new(vec![0.5, 0.5, 0.5]).unwrap();
        let grad = finite_difference_gradient(|_| 4.25, &params, 1e-5).unwrap();
        assert_eq!(grad.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_difference_rejects_bad_inputs() {
        let params = ParameterVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            finite_difference_gradient(|_| 0.0, &params, 0.0).unwrap_err(),
            Error::Parameter(_)
        ));
        assert!(matches!(
            finite_difference_gradient(|_| f64::NAN, &params, 1e-5).unwrap_err(),
            Error::Numeric(_)
        ));
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(GradientVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ParameterVector::new(vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn dot_symmetric_and_scales(
            a in proptest::collection::vec(-1e3f64..1e3, 1..40),
            b_seed in 0u64..1000,
            alpha in -100.0f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
            let b: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1e3..1e3)).collect();
            let (va, vb) = (gv(&a), gv(&b));
            prop_assert_eq!(dot(&va, &vb).unwrap(), dot(&vb, &va).unwrap());
            let lhs = dot(&va.scale(alpha), &vb).unwrap();
            let rhs = alpha * dot(&va, &vb).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 2..20),
            b_seed in 0u64..1000,
            alpha in 1e-3f64..1e3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
            let b: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (va, vb) = (gv(&a), gv(&b));
            let base = cosine(&va, &vb).unwrap();
            let scaled = cosine(&va.scale(alpha), &vb).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12, "{} vs {}", base, scaled);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn ema_converges_on_constant_stream(
            beta in 0.0f64..0.99,
            steps in 1usize..40,
        ) {
            let start = gv(&[5.0, -3.0, 0.25]);
            let target = gv(&[1.0, 1.0, 1.0]);
            let initial_gap = start.sub(&target).unwrap().l2_norm();
            let mut cache = start;
            for _ in 0..steps {
                cache = ema_update(&cache, &target, beta).unwrap();
            }
            let gap = cache.sub(&target).unwrap().l2_norm();
            let bound = beta.powi(steps as i32) * initial_gap;
            prop_assert!(gap <= bound + 1e-12, "gap {} > bound {}", gap, bound);
        }
    }
}
