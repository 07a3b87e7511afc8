//! Convergence bound of the asynchronous learning loop as a function of
//! the average style weight `x`:
//!
//! `P(x) = 1/(A x) + B x + C x^2 + D` with
//! `A = 1/(γ ε T H_min)`, `B = K δ / ε`, `C = γ K² δ H_max / ε`,
//! `D = (γ δ H_max² + γ δ K² H_max) / ε` and `δ = H_max / H_min`.
//!
//! `P'(x) = 0` clears to the cubic `2AC x³ + AB x² − 1 = 0`, which has
//! exactly one positive root since its left side is increasing on `x > 0`.

use serde::{Deserialize, Serialize};

use super::cubic::{cardano_solve, Cubic, CubicRoots};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub h_min: u32,
    pub h_max: u32,
    pub k: u32,
}

impl BoundParams {
    pub fn delta(&self) -> f64 {
        self.h_max as f64 / self.h_min as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("gamma", self.gamma), ("epsilon", self.epsilon), ("horizon", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive and finite, got {v}")));
            }
        }
        if self.h_min == 0 || self.h_max < self.h_min {
            return Err(Error::config("h_max", "need h_max >= h_min >= 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        Ok(())
    }

    /// Same parameters with `gamma` replaced by [`required_gamma`].
    pub fn on_condition(mut self) -> Self {
        self.gamma = required_gamma(self.epsilon, self.horizon, self.delta(), self.k as f64, self.h_min as f64);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CubicCoeffs {
    pub fn from_params(p: &BoundParams) -> Result<Self> {
        p.validate()?;
        let (g, e, t) = (p.gamma, p.epsilon, p.horizon);
        let (hmin, hmax, k, delta) = (p.h_min as f64, p.h_max as f64, p.k as f64, p.delta());
        Ok(CubicCoeffs {
            a: 1.0 / (g * e * t * hmin),
            b: k * delta / e,
            c: g * k * k * delta * hmax / e,
            d: (g * delta * hmax * hmax + g * delta * k * k * hmax) / e,
        })
    }
}

pub fn bound_value(x: f64, coeffs: &CubicCoeffs) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::OutOfRange { field: "x", value: x });
    }
    Ok(1.0 / (coeffs.a * x) + coeffs.b * x + coeffs.c * x * x + coeffs.d)
}

pub fn bound_derivative(x: f64, coeffs: &CubicCoeffs) -> f64 {
    -1.0 / (coeffs.a * x * x) + 2.0 * coeffs.c * x + coeffs.b
}

pub fn stationarity_cubic(coeffs: &CubicCoeffs) -> Cubic {
    Cubic { a: 2.0 * coeffs.a * coeffs.c, b: coeffs.a * coeffs.b, c: 0.0, d: -1.0 }
}

/// The learning rate at which the stationarity cubic has a repeated root:
/// `γ³ = 1 / (27 ε² δ H_min³ T K)`.
pub fn required_gamma(epsilon: f64, horizon: f64, delta: f64, k: f64, h_min: f64) -> f64 {
    (1.0 / (27.0 * epsilon * epsilon * delta * h_min.powi(3) * horizon * k)).cbrt()
}

/// `(ε² T / (2 δ² K²))^(1/3)`, the published closed form for the optimal weight.
pub fn closed_form_alpha(epsilon: f64, horizon: f64, delta: f64, k: f64) -> f64 {
    (epsilon * epsilon * horizon / (2.0 * delta * delta * k * k)).cbrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalAlpha {
    /// Positive root of the stationarity cubic: the minimizer of `P`.
    pub alpha: f64,
    /// [`closed_form_alpha`] at the same parameters.
    pub closed_form: f64,
    /// `(ε² T / (8 δ² K²))^(1/3)`, which equals `alpha` when `on_condition`.
    pub repeated_root_form: f64,
    pub required_gamma: f64,
    /// Whether `gamma` matches `required_gamma` within 1e-6 relative.
    pub on_condition: bool,
    /// `-9 γ² ε² H_min² T`, the double root of the cubic when on condition.
    pub double_root: f64,
    pub coeffs: CubicCoeffs,
    pub cubic: Cubic,
    pub roots: CubicRoots,
}

pub fn optimal_alpha(params: &BoundParams) -> Result<OptimalAlpha> {
    let coeffs = CubicCoeffs::from_params(params)?;
    let cubic = stationarity_cubic(&coeffs);
    let roots = cardano_solve(cubic.a, cubic.b, cubic.c, cubic.d)?;
    let alpha = roots
        .positive()
        .next()
        .ok_or_else(|| Error::Numerical("stationarity cubic has no positive root".into()))?;
    let (e, t, delta, k, hmin) =
        (params.epsilon, params.horizon, params.delta(), params.k as f64, params.h_min as f64);
    let gamma_star = required_gamma(e, t, delta, k, hmin);
    Ok(OptimalAlpha {
        alpha,
        closed_form: closed_form_alpha(e, t, delta, k),
        repeated_root_form: (e * e * t / (8.0 * delta * delta * k * k)).cbrt(),
        required_gamma: gamma_star,
        on_condition: ((params.gamma - gamma_star) / gamma_star).abs() <= 1e-6,
        double_root: -9.0 * params.gamma * params.gamma * e * e * hmin * hmin * t,
        coeffs,
        cubic,
        roots,
    })
}
