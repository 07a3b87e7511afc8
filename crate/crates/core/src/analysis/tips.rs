//! Tip-approval theory: with arrivals at rate λ over an approval interval h
//! and the style of the arriving site following `m(s)`, interval `k` is
//! approved with probability `P_k = (1/h) ∫₀ʰ softmax_l(−β (M_l − m(s))²)_k ds`
//! and its approval count is Poisson with mean `λ h P_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::StylePath;

/// A partition of `[0, 1]` into consecutive style intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleIntervals {
    edges: Vec<f64>,
}

impl StyleIntervals {
    /// `edges` must start at 0, end at 1 and increase strictly.
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && *edges.last().unwrap() == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::config("style_intervals", "edges must increase strictly from 0 to 1"));
        }
        Ok(StyleIntervals { edges })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1);
        StyleIntervals { edges: (0..=k).map(|i| i as f64 / k as f64).collect() }
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Interior cut points.
    pub fn cuts(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }

    /// Index of the interval holding `m`; 1 belongs to the last interval.
    pub fn index_of(&self, m: f64) -> usize {
        crate::ledger::interval_of(m, self.cuts()).min(self.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct TipTheory {
    pub lambda: f64,
    pub h: f64,
    pub intervals: StyleIntervals,
    pub beta: f64,
    pub path: StylePath,
}

impl TipTheory {
    /// Softmax over interval centers at style `m`.
    pub fn instantaneous(&self, m: f64) -> Vec<f64> {
        let logits: Vec<f64> = self.intervals.centers().iter().map(|c| -self.beta * (c - m).powi(2)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

/// Absolute quadrature tolerance.
pub const QUADRATURE_TOL: f64 = 1e-9;

pub fn tip_approval_probability(theory: &TipTheory, k: usize) -> Result<f64> {
    if k >= theory.intervals.len() {
        return Err(Error::OutOfRange { field: "k", value: k as f64 });
    }
    if !(theory.h > 0.0) {
        return Err(Error::OutOfRange { field: "h", value: theory.h });
    }
    // integrate each constant piece separately so the integrand is smooth
    let mut cuts = vec![0.0];
    cuts.extend(theory.path.breakpoints().filter(|b| *b > 0.0 && *b < theory.h));
    cuts.push(theory.h);
    let f = |s: f64| theory.instantaneous(theory.path.at(s).value())[k];
    let tol = QUADRATURE_TOL / (cuts.len() - 1) as f64;
    let integral: f64 = cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], tol)).sum();
    Ok(integral / theory.h)
}

pub fn expected_approvals(theory: &TipTheory, k: usize) -> Result<f64> {
    Ok(theory.lambda * theory.h * tip_approval_probability(theory, k)?)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Pearson goodness-of-fit of observed counts against Poisson(`mean`).
/// Count values are pooled into bins whose expected frequency is at least
/// `min_expected`, the two extreme bins absorbing the tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonGof {
    pub statistic: f64,
    /// Bins minus one.
    pub dof: usize,
}

pub fn poisson_gof(counts: &[u64], mean: f64, min_expected: f64) -> Result<PoissonGof> {
    if counts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(mean > 0.0) {
        return Err(Error::OutOfRange { field: "mean", value: mean });
    }
    let n = counts.len() as f64;
    // bin upper bounds (inclusive), built left to right
    let mut uppers = Vec::new();
    let mut acc = 0.0;
    let mut cdf = 0.0;
    let mut j: u64 = 0;
    while 1.0 - cdf > 1e-15 {
        let p = poisson_pmf(j, mean);
        cdf += p;
        acc += p * n;
        let tail = (1.0 - cdf).max(0.0) * n;
        if acc >= min_expected && tail >= min_expected {
            uppers.push(j);
            acc = 0.0;
        }
        if tail < min_expected {
            break;
        }
        j += 1;
    }
    // final bin takes everything above the last bound
    let bins = uppers.len() + 1;
    if bins < 2 {
        return Err(Error::Numerical("too few observations to form two bins".into()));
    }
    let bin_of = |c: u64| uppers.partition_point(|&u| u < c);
    let mut observed = vec![0.0; bins];
    for &c in counts {
        observed[bin_of(c)] += 1.0;
    }
    let mut expected = vec![0.0; bins];
    let mut lower_cdf = 0.0;
    for (b, e) in expected.iter_mut().enumerate() {
        let upper_cdf = if b < uppers.len() { poisson_cdf(uppers[b], mean) } else { 1.0 };
        *e = (upper_cdf - lower_cdf) * n;
        lower_cdf = upper_cdf;
    }
    let statistic = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok(PoissonGof { statistic, dof: bins - 1 })
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn poisson_pmf(k: u64, mean: f64) -> f64 {
    (k as f64 * mean.ln() - mean - ln_factorial(k)).exp()
}

fn poisson_cdf(k: u64, mean: f64) -> f64 {
    (0..=k).map(|j| poisson_pmf(j, mean)).sum::<f64>().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StyleIndicator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(v: f64) -> StyleIndicator {
        StyleIndicator::new(v).unwrap()
    }

    fn piecewise() -> StylePath {
        StylePath::piecewise(vec![(0.0, m(0.1)), (0.3, m(0.55)), (0.75, m(0.95))]).unwrap()
    }

    #[test]
    fn zero_beta_is_uniform() {
        for k in [3, 7] {
            let th = TipTheory { lambda: 50.0, h: 1.0, intervals: StyleIntervals::uniform(k), beta: 0.0, path: piecewise() };
            for j in 0..k {
                assert!((tip_approval_probability(&th, j).unwrap() - 1.0 / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_style_with_large_beta_concentrates() {
        let iv = StyleIntervals::uniform(5);
        let th = TipTheory { lambda: 1.0, h: 2.0, intervals: iv.clone(), beta: 1e4, path: StylePath::constant(m(iv.center(3))) };
        assert!(tip_approval_probability(&th, 3).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let th = TipTheory { lambda: 700.0, h: 1.0, intervals: StyleIntervals::uniform(7), beta: 5.0, path: piecewise() };
        let total: f64 = (0..7).map(|k| tip_approval_probability(&th, k).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let approvals: f64 = (0..7).map(|k| expected_approvals(&th, k).unwrap()).sum();
        assert!((approvals - 700.0).abs() < 1e-6);
    }

    #[test]
    fn heavy_preset_splits_evenly_without_style_preference() {
        let th = TipTheory { lambda: 700.0, h: 1.0, intervals: StyleIntervals::uniform(7), beta: 0.0, path: piecewise() };
        for k in 0..7 {
            assert!((expected_approvals(&th, k).unwrap() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let th = TipTheory { lambda: 1.0, h: 1.0, intervals: StyleIntervals::uniform(3), beta: 5.0, path: piecewise() };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1_000_000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let s: f64 = rng.random_range(0.0..1.0);
            let p = th.instantaneous(th.path.at(s).value());
            for k in 0..3 {
                sums[k] += p[k];
                sq[k] += p[k] * p[k];
            }
        }
        for k in 0..3 {
            let mean = sums[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            let q = tip_approval_probability(&th, k).unwrap();
            assert!((q - mean).abs() <= 3.0 * se, "k={k}: {q} vs {mean} ± {se}");
        }
    }

    #[test]
    fn intervals() {
        let iv = StyleIntervals::uniform(4);
        assert_eq!(iv.index_of(0.0), 0);
        assert_eq!(iv.index_of(0.25), 1);
        assert_eq!(iv.index_of(1.0), 3);
        assert!(StyleIntervals::new(vec![0.0, 0.5, 0.4, 1.0]).is_err());
    }

    #[test]
    fn gof_accepts_poisson_and_rejects_overdispersion() {
        use rand_distr::{Distribution, Poisson};
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = 12.0;
        let good: Vec<u64> = (0..1000).map(|_| Poisson::new(mean).unwrap().sample(&mut rng) as u64).collect();
        let g = poisson_gof(&good, mean, 5.0).unwrap();
        let crit = ChiSquared::new(g.dof as f64).unwrap().inverse_cdf(0.99);
        assert!(g.statistic < crit, "{g:?} crit {crit}");

        let bad: Vec<u64> = (0..1000)
            .map(|i| Poisson::new(if i % 2 == 0 { 6.0 } else { 18.0 }).unwrap().sample(&mut rng) as u64)
            .collect();
        let b = poisson_gof(&bad, mean, 5.0).unwrap();
        let crit = ChiSquared::new(b.dof as f64).unwrap().inverse_cdf(0.99);
        assert!(b.statistic > crit);
    }
}
