//! Real roots of `a x^3 + b x^2 + c x + d` by the discriminant method.
//!
//! With `A0 = b^2 - 3ac`, `B0 = bc - 9ad`, `C0 = c^2 - 3bd` and
//! `D = B0^2 - 4 A0 C0`: `A0 = B0 = 0` gives a triple root, `D > 0` one real
//! root, `D = 0` a simple and a double root, `D < 0` three distinct roots.
//! Roots are polished with a few Newton steps.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cubic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Cubic {
    pub fn eval(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (3.0 * self.a * x + 2.0 * self.b) * x + self.c
    }

    pub fn max_abs_coeff(&self) -> f64 {
        [self.a, self.b, self.c, self.d].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubicCase {
    TripleRoot,
    OneReal,
    RepeatedRoot,
    ThreeDistinct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubicRoots {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub discriminant: f64,
    pub case: CubicCase,
    /// Real roots with multiplicity, ascending.
    pub roots: Vec<f64>,
}

impl CubicRoots {
    pub fn positive(&self) -> impl Iterator<Item = f64> + '_ {
        self.roots.iter().copied().filter(|r| *r > 0.0)
    }
}

/// Relative tolerance under which the discriminant counts as zero.
pub const DISCRIMINANT_TOL: f64 = 1e-8;

pub fn cardano_solve(a: f64, b: f64, c: f64, d: f64) -> Result<CubicRoots> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::DegenerateCubic);
    }
    let p = Cubic { a, b, c, d };
    let a0 = b * b - 3.0 * a * c;
    let b0 = b * c - 9.0 * a * d;
    let c0 = c * c - 3.0 * b * d;
    let disc = b0 * b0 - 4.0 * a0 * c0;
    let tiny = 1e-14;

    let (case, mut roots) = if a0.abs() <= tiny * (b * b + 3.0 * (a * c).abs())
        && b0.abs() <= tiny * ((b * c).abs() + 9.0 * (a * d).abs())
    {
        let x = -b / (3.0 * a);
        (CubicCase::TripleRoot, vec![x, x, x])
    } else if disc.abs() <= DISCRIMINANT_TOL * (b0 * b0 + 4.0 * (a0 * c0).abs()) {
        let k = b0 / a0;
        (CubicCase::RepeatedRoot, vec![-b / a + k, -k / 2.0, -k / 2.0])
    } else if disc > 0.0 {
        let s = disc.sqrt();
        let y1 = a0 * b + 1.5 * a * (-b0 + s);
        let y2 = a0 * b + 1.5 * a * (-b0 - s);
        (CubicCase::OneReal, vec![(-b - (y1.cbrt() + y2.cbrt())) / (3.0 * a)])
    } else {
        let sa = a0.sqrt();
        let t = ((2.0 * a0 * b - 3.0 * a * b0) / (2.0 * a0 * sa)).clamp(-1.0, 1.0);
        let th = t.acos() / 3.0;
        let (cos, sin) = (th.cos(), th.sin());
        let r3 = 3f64.sqrt();
        (
            CubicCase::ThreeDistinct,
            vec![
                (-b - 2.0 * sa * cos) / (3.0 * a),
                (-b + sa * (cos + r3 * sin)) / (3.0 * a),
                (-b + sa * (cos - r3 * sin)) / (3.0 * a),
            ],
        )
    };
    for r in roots.iter_mut() {
        *r = polish(&p, *r);
    }
    roots.sort_by(f64::total_cmp);
    Ok(CubicRoots { a0, b0, c0, discriminant: disc, case, roots })
}

fn polish(p: &Cubic, mut x: f64) -> f64 {
    for _ in 0..8 {
        let fx = p.eval(x);
        let dfx = p.derivative(x);
        if fx == 0.0 || dfx == 0.0 {
            break;
        }
        let next = x - fx / dfx;
        if !next.is_finite() || p.eval(next).abs() >= fx.abs() {
            break;
        }
        x = next;
    }
    x
}
