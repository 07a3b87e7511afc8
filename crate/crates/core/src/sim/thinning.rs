//! Per-interval approval counts from the selection rule itself, for
//! comparison against the thinned-Poisson prediction.
//!
//! The ledger holds one tip at each interval center and is never extended,
//! so every arrival sees the same tip set. Each arrival records the interval
//! of its first draw.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::analysis::TipTheory;
use crate::crypto::{CryptoSuite, KeyedDigestScheme, SigningKey};
use crate::error::{Error, Result};
use crate::ledger::{AppendOutcome, Ledger, RthParams, TipSnapshot};
use crate::model::{ModelParams, StyleIndicator};
use crate::site::Site;

/// `counts[k][n]` is the number of approvals of interval `k` in round `n`.
pub fn simulate_interval_approvals<R: Rng + ?Sized>(theory: &TipTheory, rounds: usize, rng: &mut R) -> Result<Vec<Vec<u64>>> {
    let k = theory.intervals.len();
    let rsu = SigningKey::derive(0, "rsu", 0);
    let mut reg = KeyedDigestScheme::new();
    reg.register(&rsu);
    let crypto = CryptoSuite::with_registry(reg);
    let mut ledger = Ledger::new(0);
    let mut interval_of = BTreeMap::new();
    for (i, c) in theory.intervals.centers().into_iter().enumerate() {
        let site = Site::genesis(ModelParams::zeros(0), StyleIndicator::new(c)?, i as u64).issue(&rsu, 0, &crypto);
        interval_of.insert(site.digest, i);
        if let AppendOutcome::Rejected(r) = ledger.append_verified(site, &crypto) {
            return Err(Error::MalformedSite(r.to_string()));
        }
    }
    let snap = TipSnapshot::of(&ledger);
    let params = RthParams { alpha: 0.0, beta: theory.beta };
    let rate = theory.lambda * theory.h;
    let arrivals = Poisson::new(rate).map_err(|e| Error::config("lambda", e.to_string()))?;

    let mut counts = vec![vec![0u64; rounds]; k];
    for n in 0..rounds {
        let arrivals_n = arrivals.sample(rng) as u64;
        for _ in 0..arrivals_n {
            let s = rng.random_range(0.0..theory.h);
            let m = theory.path.at(s).value();
            let sel = snap.select(m, params, rng)?;
            let row: &mut Vec<u64> = &mut counts[interval_of[&sel.first]];
            row[n] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{expected_approvals, StyleIntervals};
    use crate::learning::StylePath;
    use crate::sim::population::stream_rng;

    #[test]
    fn mean_counts_track_prediction() {
        let path = StylePath::piecewise(vec![
            (0.0, StyleIndicator::new(0.1).unwrap()),
            (0.4, StyleIndicator::new(0.8).unwrap()),
        ])
        .unwrap();
        let theory = TipTheory { lambda: 40.0, h: 1.0, intervals: StyleIntervals::uniform(3), beta: 8.0, path };
        let counts = simulate_interval_approvals(&theory, 2000, &mut stream_rng(5, 0)).unwrap();
        for (k, c) in counts.iter().enumerate() {
            let want = expected_approvals(&theory, k).unwrap();
            let mean = c.iter().sum::<u64>() as f64 / c.len() as f64;
            let se = (want / c.len() as f64).sqrt();
            assert!((mean - want).abs() < 4.0 * se, "k={k}: {mean} vs {want}");
        }
    }
}
