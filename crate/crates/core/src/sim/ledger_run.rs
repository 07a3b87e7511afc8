//! Ledger growth without learning: batches of arrivals per round, each
//! selecting tips from the snapshot taken at the start of its round.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::analysis::StyleIntervals;
use crate::crypto::{CryptoSuite, KeyedDigestScheme, SigningKey};
use crate::error::{Error, Result};
use crate::ledger::{AppendOutcome, Ledger, RthParams, TipSnapshot};
use crate::model::{Dataset, ModelParams, StyleIndicator};
use crate::site::Site;

use super::config::ArrivalModel;
use super::output::RoundRecord;

/// Number of arrivals in one round of length `round_length`.
pub fn sample_arrivals<R: Rng + ?Sized>(model: &ArrivalModel, scale: f64, round_length: f64, rng: &mut R) -> Result<usize> {
    let f = scale * round_length;
    let n = match *model {
        ArrivalModel::Uniform { low, high } => rng.random_range(low..=high) * f,
        ArrivalModel::Poisson { lambda } => {
            let rate = lambda * f;
            if rate <= 0.0 {
                0.0
            } else {
                Poisson::new(rate).map_err(|e| Error::config("arrival.lambda", e.to_string()))?.sample(rng)
            }
        }
        ArrivalModel::Gamma { shape, scale: theta } => {
            Gamma::new(shape, theta).map_err(|e| Error::config("arrival", e.to_string()))?.sample(rng) * f
        }
    };
    Ok(n.round().max(0.0) as usize)
}

#[derive(Debug, Clone)]
pub struct LedgerRun {
    pub arrival: ArrivalModel,
    pub arrival_scale: f64,
    pub round_length: f64,
    pub genesis: usize,
    pub rounds: usize,
    /// Stops appending once this many non-genesis sites exist.
    pub max_appends: Option<usize>,
    pub rth: RthParams,
    pub intervals: StyleIntervals,
    pub pow_difficulty: u32,
    /// Style ranges of the issuers; each arrival picks one uniformly and
    /// draws its style inside it.
    pub sources: Vec<[f64; 2]>,
}

fn draw_style<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> Result<StyleIndicator> {
    StyleIndicator::new(if range[0] < range[1] { rng.random_range(range[0]..=range[1]) } else { range[0] })
}

/// Ledger payloads are placeholders; the bias slot carries a sequence
/// number so that no two sites share a digest.
fn placeholder(seq: usize) -> ModelParams {
    ModelParams::new(vec![0.0, 0.0, seq as f64]).expect("finite")
}

pub fn snapshot_record(ledger: &Ledger, round: u64, time: f64, intervals: &StyleIntervals) -> RoundRecord {
    RoundRecord {
        round,
        time,
        sites: ledger.len() as u64,
        tip_count: ledger.tip_count() as u64,
        tips_per_interval: ledger.tip_count_by_interval(intervals.cuts()).into_iter().map(|c| c as u64).collect(),
        assortativity: ledger.style_assortativity(),
        ..RoundRecord::default()
    }
}

impl LedgerRun {
    /// Runs all rounds and returns the final ledger and one record per round.
    pub fn run<R: Rng + ?Sized>(&self, seed: u64, rng: &mut R) -> Result<(Ledger, Vec<RoundRecord>)> {
        if self.sources.is_empty() {
            return Err(Error::config("sources", "at least one style source is required"));
        }
        let rsu = SigningKey::derive(seed, "rsu", 0);
        let keys: Vec<SigningKey> = (0..self.sources.len()).map(|i| SigningKey::derive(seed, "icv", i as u64)).collect();
        let mut reg = KeyedDigestScheme::new();
        reg.register(&rsu);
        keys.iter().for_each(|k| {
            reg.register(k);
        });
        let crypto = CryptoSuite::with_registry(reg);

        let mut ledger = Ledger::new(self.pow_difficulty);
        let mut seq = 0usize;
        for g in 0..self.genesis {
            let m = draw_style(self.sources[g % self.sources.len()], rng)?;
            let site = Site::genesis(placeholder(seq), m, g as u64).issue(&rsu, self.pow_difficulty, &crypto);
            seq += 1;
            if let AppendOutcome::Rejected(r) = ledger.append_verified(site, &crypto) {
                return Err(Error::MalformedSite(format!("genesis refused: {r}")));
            }
        }

        let no_tests = Dataset::new(1);
        let mut appended = 0usize;
        let mut records = Vec::with_capacity(self.rounds);
        for round in 1..=self.rounds {
            let snap = TipSnapshot::of(&ledger);
            let mut n = sample_arrivals(&self.arrival, self.arrival_scale, self.round_length, rng)?;
            if let Some(cap) = self.max_appends {
                n = n.min(cap.saturating_sub(appended));
            }
            for _ in 0..n {
                let src = rng.random_range(0..self.sources.len());
                let m = draw_style(self.sources[src], rng)?;
                let sel = snap.select(m.value(), self.rth, rng)?;
                let site = Site::ordinary(placeholder(seq), m, 0, sel.parents()).issue(&keys[src], self.pow_difficulty, &crypto);
                seq += 1;
                match ledger.verify_and_append(site, &sel, &no_tests, f64::INFINITY, &crypto) {
                    AppendOutcome::Appended { .. } => appended += 1,
                    AppendOutcome::Rejected(r) => return Err(Error::MalformedSite(format!("honest site refused: {r}"))),
                }
            }
            ledger.advance_round();
            records.push(snapshot_record(&ledger, round as u64, round as f64 * self.round_length, &self.intervals));
            if self.max_appends.is_some_and(|cap| appended >= cap) {
                break;
            }
        }
        Ok((ledger, records))
    }
}

/// Relative change between the two halves of the trailing `window`:
/// `|mean(second) - mean(first)| / mean(window)`.
pub fn relative_drift(values: &[f64], window: usize) -> Result<f64> {
    if window < 2 || values.len() < window {
        return Err(Error::OutOfRange { field: "window", value: window as f64 });
    }
    let tail = &values[values.len() - window..];
    let (a, b) = tail.split_at(window / 2);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let m = mean(tail);
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok((mean(b) - mean(a)).abs() / m)
}
