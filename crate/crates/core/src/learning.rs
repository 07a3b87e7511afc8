//! Synthetic driving task, local training and asynchronous aggregation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{test_gap, Dataset, ModelParams, StyleIndicator, TestGap};

/// Ground truth of the synthetic regression task:
/// `y = w_shared·x + (m - 0.5)(w_style·x) + bias + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub w_shared: Vec<f64>,
    pub w_style: Vec<f64>,
    pub bias: f64,
    pub noise: f64,
}

impl SyntheticTask {
    /// Weights drawn from `rng`; `w_style` is rescaled to norm `style_strength`.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, feature_dim: usize, noise: f64, style_strength: f64) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::config("task.feature_dim", "must be at least 1"));
        }
        if !(noise >= 0.0) {
            return Err(Error::OutOfRange { field: "noise", value: noise });
        }
        let w_shared: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut w_style: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = w_style.iter().map(|v| v * v).sum::<f64>().sqrt();
        w_style.iter_mut().for_each(|v| *v *= style_strength / norm);
        let bias = rng.sample(StandardNormal);
        Ok(SyntheticTask { w_shared, w_style, bias, noise })
    }

    pub fn feature_dim(&self) -> usize {
        self.w_shared.len()
    }

    /// Noise-free label.
    pub fn mean_label(&self, x: &[f64], style: f64) -> f64 {
        let shared: f64 = self.w_shared.iter().zip(x).map(|(w, x)| w * x).sum();
        let styled: f64 = self.w_style.iter().zip(x).map(|(w, x)| w * x).sum();
        shared + (style - 0.5) * styled + self.bias
    }

    /// `n` examples with standard normal features, all at style `style`.
    pub fn gen_dataset<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, style: StyleIndicator) -> Dataset {
        let mut data = Dataset::new(self.feature_dim());
        let mut x = vec![0.0; self.feature_dim()];
        for _ in 0..n {
            x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let eta = if self.noise > 0.0 { self.noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            let y = self.mean_label(&x, style.value()) + eta;
            data.push(&x, style, y).expect("feature dimension is fixed by the task");
        }
        data
    }

    /// Like [`SyntheticTask::gen_dataset`] with each example's style drawn
    /// uniformly from `[lo, hi]`.
    pub fn gen_mixed_dataset<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, lo: f64, hi: f64) -> Result<Dataset> {
        let mut parts = Vec::with_capacity(n);
        for _ in 0..n {
            let m = StyleIndicator::new(if hi > lo { rng.random_range(lo..=hi) } else { lo })?;
            parts.push(self.gen_dataset(rng, 1, m));
        }
        Dataset::concat(&parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub rate: f64,
}

/// Mini-batch SGD on mean squared error. Each epoch visits a fresh
/// permutation of `data` in batches of `batch_size`.
pub fn local_sgd<R: Rng + ?Sized>(init: &ModelParams, data: &Dataset, cfg: &SgdConfig, rng: &mut R) -> Result<ModelParams> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("learning.sgd", "epochs and batch_size must be at least 1"));
    }
    if !(cfg.rate >= 0.0) {
        return Err(Error::OutOfRange { field: "rate", value: cfg.rate });
    }
    data.check_model(init)?;
    let mut theta = init.clone();
    if cfg.rate == 0.0 {
        return Ok(theta);
    }
    let d = data.feature_dim();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; d + 2];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = data.x(i);
                let m = data.style(i);
                let r = data.label(i) - theta.predict(x, m);
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g -= 2.0 * r * xi;
                }
                grad[d] -= 2.0 * r * m;
                grad[d + 1] -= 2.0 * r;
            }
            let scale = cfg.rate / batch.len() as f64;
            for (t, g) in theta.as_mut_slice().iter_mut().zip(&grad) {
                *t -= scale * g;
            }
        }
        if !theta.is_finite() {
            return Err(Error::Numerical("SGD produced a non-finite parameter".into()));
        }
    }
    Ok(theta)
}

/// Per-ICV training time: `mean` scaled by a uniform factor in
/// `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeDelay {
    pub mean: f64,
    pub jitter: f64,
}

impl ComputeDelay {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.jitter == 0.0 {
            return self.mean;
        }
        self.mean * rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
    }
}

/// `e^(1 - t/T)`, in `[1, e]` for `t` in `[0, T]`.
pub fn freshness(t: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::OutOfRange { field: "horizon", value: horizon });
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::OutOfRange { field: "t", value: t });
    }
    Ok((1.0 - t / horizon).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaRule {
    /// `1 - |m - M|`
    #[default]
    Linear,
    /// `exp(-|m - M|)`
    Exponential,
}

pub fn style_weight(m: StyleIndicator, mean_style: f64, rule: AlphaRule) -> f64 {
    let gap = (m.value() - mean_style).abs();
    match rule {
        AlphaRule::Linear => 1.0 - gap,
        AlphaRule::Exponential => (-gap).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateWeight {
    pub freshness: f64,
    pub style: f64,
    /// `min(style * freshness, 1)`
    pub mixing: f64,
}

impl UpdateWeight {
    pub fn new(ctx: &UpdateContext) -> Result<Self> {
        let f = freshness(ctx.t, ctx.horizon)?;
        let a = style_weight(ctx.style, ctx.mean_style, ctx.rule);
        Ok(UpdateWeight { freshness: f, style: a, mixing: (a * f).min(1.0) })
    }
}

/// Everything an asynchronous update needs besides the two models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateContext {
    pub t: f64,
    pub horizon: f64,
    pub style: StyleIndicator,
    pub mean_style: f64,
    pub rule: AlphaRule,
}

/// The RSU-side aggregated model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ModelParams,
    pub version: u64,
    /// Test gap of `params` on the RSU test set.
    pub reference_gap: f64,
    pub last_update: f64,
}

impl GlobalModel {
    /// Version 1 at time 0.
    pub fn new(params: ModelParams, rsu_testset: &Dataset) -> Result<Self> {
        let reference_gap = test_gap(&params, rsu_testset)?.value();
        Ok(GlobalModel { params, version: 1, reference_gap, last_update: 0.0 })
    }

    /// `Φ ← (1 - c)Φ + cθ` with the clamped mixing coefficient `c`.
    pub fn async_update(&self, local: &ModelParams, ctx: &UpdateContext, rsu_testset: &Dataset) -> Result<GlobalModel> {
        if local.dim() != self.params.dim() {
            return Err(Error::DimensionMismatch { expected: self.params.dim(), got: local.dim() });
        }
        if ctx.t < self.last_update {
            return Err(Error::OutOfRange { field: "t", value: ctx.t });
        }
        let c = UpdateWeight::new(ctx)?.mixing;
        let mixed = self.params.as_slice().iter().zip(local.as_slice()).map(|(p, q)| (1.0 - c) * p + c * q).collect();
        let params = ModelParams::new(mixed)?;
        let reference_gap = test_gap(&params, rsu_testset)?.value();
        Ok(GlobalModel { params, version: self.version + 1, reference_gap, last_update: ctx.t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Upload,
    /// Replace the local model with the current global model.
    Download,
}

/// Upload iff the local gap does not exceed the reference gap.
pub fn adaptive_gate(local_gap: TestGap, reference_gap: f64) -> GateDecision {
    if local_gap.value() <= reference_gap {
        GateDecision::Upload
    } else {
        GateDecision::Download
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RsuDecision {
    Accepted,
    Rejected,
}

/// Accept iff the gap on the RSU test set is within `epsilon`; an infinite
/// `epsilon` disables the check.
pub fn rsu_accept(received: &ModelParams, rsu_testset: &Dataset, epsilon: f64) -> Result<RsuDecision> {
    if epsilon == f64::INFINITY {
        return Ok(RsuDecision::Accepted);
    }
    let gap = test_gap(received, rsu_testset)?.value();
    Ok(if gap <= epsilon { RsuDecision::Accepted } else { RsuDecision::Rejected })
}

/// Unweighted coordinate mean.
pub fn fedave_baseline(locals: &[ModelParams]) -> Result<ModelParams> {
    let first = locals.first().ok_or(Error::EmptyDataset)?;
    let mut sum = vec![0.0; first.dim()];
    for m in locals {
        if m.dim() != sum.len() {
            return Err(Error::DimensionMismatch { expected: sum.len(), got: m.dim() });
        }
        sum.iter_mut().zip(m.as_slice()).for_each(|(s, v)| *s += v);
    }
    let n = locals.len() as f64;
    ModelParams::new(sum.into_iter().map(|s| s / n).collect())
}

/// Least-squares fit of the linear model on `data` (minimum-norm solution
/// when the design is rank deficient).
pub fn least_squares(data: &Dataset) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.feature_dim();
    let n = data.len();
    let design = DMatrix::from_fn(n, d + 2, |i, j| match j {
        j if j < d => data.x(i)[j],
        j if j == d => data.style(i),
        _ => 1.0,
    });
    let labels = DVector::from_column_slice(data.labels());
    let svd = design.svd(true, true);
    let theta = svd.solve(&labels, 1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
    ModelParams::new(theta.iter().copied().collect())
}

/// A piecewise-constant style path `m(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StylePath {
    /// `(start time, style)` pairs sorted by start time; the first starts at 0.
    pieces: Vec<(f64, StyleIndicator)>,
}

impl StylePath {
    pub fn constant(m: StyleIndicator) -> Self {
        StylePath { pieces: vec![(0.0, m)] }
    }

    pub fn piecewise(mut pieces: Vec<(f64, StyleIndicator)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::config("style_path", "needs at least one piece"));
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        pieces[0].0 = f64::NEG_INFINITY;
        Ok(StylePath { pieces })
    }

    /// Times at which the style changes.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().skip(1).map(|p| p.0)
    }

    pub fn at(&self, t: f64) -> StyleIndicator {
        let i = self.pieces.partition_point(|p| p.0 <= t);
        self.pieces[i.saturating_sub(1)].1
    }
}

/// Running mean of the styles of accepted sites; 0.5 before the first one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanStyle {
    sum: f64,
    count: u64,
}

impl MeanStyle {
    pub fn push(&mut self, m: StyleIndicator) {
        self.sum += m.value();
        self.count += 1;
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.5
        } else {
            self.sum / self.count as f64
        }
    }
}
