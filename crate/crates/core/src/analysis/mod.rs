//! Closed-form theory oracles for the ledger and the learning loop.

pub mod bound;
pub mod cubic;
pub mod tips;

pub use bound::{
    bound_derivative, bound_value, closed_form_alpha, optimal_alpha, required_gamma, stationarity_cubic, BoundParams,
    CubicCoeffs, OptimalAlpha,
};
pub use cubic::{cardano_solve, Cubic, CubicCase, CubicRoots};
pub use tips::{expected_approvals, poisson_gof, tip_approval_probability, PoissonGof, StyleIntervals, TipTheory};
