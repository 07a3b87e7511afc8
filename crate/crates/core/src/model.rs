//! Driving-style indicator, linear driving models and the test-gap metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Throttle `a ∈ [0,1]`, steering `b ∈ [-1,1]`, braking `c ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingControl {
    throttle: f64,
    steering: f64,
    braking: f64,
}

impl DrivingControl {
    pub fn new(throttle: f64, steering: f64, braking: f64) -> Result<Self> {
        check_range("throttle", throttle, 0.0, 1.0)?;
        check_range("steering", steering, -1.0, 1.0)?;
        check_range("braking", braking, 0.0, 1.0)?;
        Ok(DrivingControl { throttle, steering, braking })
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn steering(&self) -> f64 {
        self.steering
    }

    pub fn braking(&self) -> f64 {
        self.braking
    }
}

fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange { field, value })
    }
}

/// Driving style indicator `m ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct StyleIndicator(f64);

impl StyleIndicator {
    pub fn new(m: f64) -> Result<Self> {
        check_range("style indicator", m, 0.0, 1.0)?;
        Ok(StyleIndicator(m))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `m = (a(1-c) + b²) / 2`.
pub fn style_indicator(ctrl: &DrivingControl) -> StyleIndicator {
    let m = (ctrl.throttle * (1.0 - ctrl.braking) + ctrl.steering * ctrl.steering) / 2.0;
    // the control ranges bound m to [0,1]; clamp only absorbs rounding
    StyleIndicator(m.clamp(0.0, 1.0))
}

/// Parameters of a linear driving model over `[x_1..x_d, m, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if let Some(bad) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter {bad}")));
        }
        Ok(ModelParams(theta))
    }

    /// All-zero model for `feature_dim` data features.
    pub fn zeros(feature_dim: usize) -> Self {
        ModelParams(vec![0.0; feature_dim + 2])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.0.len() - 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn predict(&self, x: &[f64], style: f64) -> f64 {
        let d = x.len();
        debug_assert_eq!(d + 2, self.0.len());
        let dot: f64 = self.0[..d].iter().zip(x).map(|(w, v)| w * v).sum();
        dot + self.0[d] * style + self.0[d + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Labelled examples `(x, m, y)` stored column-wise by role.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    feature_dim: usize,
    features: Vec<f64>,
    styles: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_dim: usize) -> Self {
        Dataset { feature_dim, ..Default::default() }
    }

    pub fn push(&mut self, x: &[f64], style: StyleIndicator, y: f64) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: x.len() });
        }
        self.features.extend_from_slice(x);
        self.styles.push(style.value());
        self.labels.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn style(&self, i: usize) -> f64 {
        self.styles[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Adds `offset` to every label (a miscalibrated sensor).
    pub fn shift_labels(&mut self, offset: f64) {
        self.labels.iter_mut().for_each(|y| *y += offset);
    }

    /// Concatenation of several datasets with the same feature dimension.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut out: Option<Dataset> = None;
        for part in parts {
            let acc = out.get_or_insert_with(|| Dataset::new(part.feature_dim));
            if part.feature_dim != acc.feature_dim {
                return Err(Error::DimensionMismatch { expected: acc.feature_dim, got: part.feature_dim });
            }
            acc.features.extend_from_slice(&part.features);
            acc.styles.extend_from_slice(&part.styles);
            acc.labels.extend_from_slice(&part.labels);
        }
        out.ok_or(Error::EmptyDataset)
    }

    pub fn check_model(&self, model: &ModelParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if model.dim() != self.feature_dim + 2 {
            return Err(Error::DimensionMismatch { expected: self.feature_dim + 2, got: model.dim() });
        }
        Ok(())
    }

    /// Mean squared error of `model` on this dataset.
    pub fn mse(&self, model: &ModelParams) -> Result<f64> {
        self.check_model(model)?;
        let total: f64 = (0..self.len())
            .map(|i| {
                let r = self.labels[i] - model.predict(self.x(i), self.styles[i]);
                r * r
            })
            .sum();
        Ok(total / self.len() as f64)
    }
}

/// Mean absolute error between labels and predictions.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TestGap(f64);

impl TestGap {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn test_gap(model: &ModelParams, testset: &Dataset) -> Result<TestGap> {
    testset.check_model(model)?;
    let total: f64 = (0..testset.len())
        .map(|i| (testset.label(i) - model.predict(testset.x(i), testset.style(i))).abs())
        .sum();
    Ok(TestGap(total / testset.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(a: f64, b: f64, c: f64) -> f64 {
        style_indicator(&DrivingControl::new(a, b, c).unwrap()).value()
    }

    #[test]
    fn style_indicator_examples() {
        assert_eq!(m(0.0, 0.0, 0.0), 0.0);
        assert!((m(0.9, 0.1, 0.8) - 0.095).abs() < 1e-12);
        assert!((m(0.9, 0.1, 0.0) - 0.455).abs() < 1e-12);
        assert_eq!(m(1.0, -1.0, 0.0), 1.0);
    }

    #[test]
    fn control_ranges_are_enforced() {
        assert!(DrivingControl::new(1.1, 0.0, 0.0).is_err());
        assert!(DrivingControl::new(0.5, -1.5, 0.0).is_err());
        assert!(DrivingControl::new(0.5, 0.0, -0.1).is_err());
        assert!(DrivingControl::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(StyleIndicator::new(1.01).is_err());
    }

    proptest! {
        #[test]
        fn style_monotone_in_throttle(a1 in 0.0..1.0f64, da in 0.001..1.0f64, b in -1.0..1.0f64, c in 0.0..0.99f64) {
            let a2 = (a1 + da).min(1.0);
            prop_assume!(a2 > a1);
            prop_assert!(m(a2, b, c) > m(a1, b, c));
        }

        #[test]
        fn style_monotone_in_abs_steering(a in 0.0..1.0f64, b1 in 0.0..0.99f64, db in 0.001..1.0f64, c in 0.0..1.0f64, neg in any::<bool>()) {
            let b2 = (b1 + db).min(1.0);
            prop_assume!(b2 > b1);
            let sign = if neg { -1.0 } else { 1.0 };
            prop_assert!(m(a, sign * b2, c) > m(a, b1, c));
        }

        #[test]
        fn gap_detects_uniform_translation(delta in 0.001..5.0f64, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let model = ModelParams::new(vec![0.3, -1.2, 0.5, 0.1]).unwrap();
            let mut perfect = Dataset::new(2);
            for _ in 0..20 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let s = StyleIndicator::new(rng.random_range(0.0..1.0)).unwrap();
                perfect.push(&x, s, model.predict(&x, s.value())).unwrap();
            }
            let mut shifted = model.clone();
            *shifted.as_mut_slice().last_mut().unwrap() += delta;
            let e = test_gap(&shifted, &perfect).unwrap().value();
            prop_assert!((e - delta).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_of_perfect_model_is_zero() {
        let model = ModelParams::new(vec![2.0, 0.0, 1.0]).unwrap();
        let mut ds = Dataset::new(1);
        for i in 0..5 {
            let x = [i as f64];
            ds.push(&x, StyleIndicator::new(0.5).unwrap(), model.predict(&x, 0.5)).unwrap();
        }
        assert_eq!(test_gap(&model, &ds).unwrap().value(), 0.0);
    }

    #[test]
    fn gap_single_example() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.0], StyleIndicator::new(0.0).unwrap(), 1.0).unwrap();
        let model = ModelParams::new(vec![0.0, 0.0, 0.8]).unwrap();
        assert!((test_gap(&model, &ds).unwrap().value() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn gap_of_zero_model_is_mean_abs_label() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut ds = Dataset::new(3);
        let mut labels = Vec::new();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(-3.0..3.0);
            labels.push(y);
            ds.push(&x, StyleIndicator::new(0.4).unwrap(), y).unwrap();
        }
        // independent recomputation
        let mut expected = 0.0;
        for y in &labels {
            expected += if *y < 0.0 { -*y } else { *y };
        }
        expected /= 10.0;
        let e = test_gap(&ModelParams::zeros(3), &ds).unwrap().value();
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn gap_errors() {
        let ds = Dataset::new(2);
        assert!(matches!(test_gap(&ModelParams::zeros(2), &ds), Err(Error::EmptyDataset)));
        let mut ds = Dataset::new(2);
        ds.push(&[0.0, 0.0], StyleIndicator::default(), 0.0).unwrap();
        assert!(matches!(
            test_gap(&ModelParams::zeros(3), &ds),
            Err(Error::DimensionMismatch { expected: 4, got: 5 })
        ));
    }
}
