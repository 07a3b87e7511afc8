//! Named experiments. Each returns an [`EventLog`] with one series per
//! variant; all variants of a run share one seeded population.

use crate::error::{Error, Result};
use crate::ledger::RthParams;
use crate::learning::local_sgd;
use crate::model::{test_gap, Dataset};

use super::adl::{run_adl, run_central, run_fedave, AdlSettings, Environment, Gate};
use super::config::SimConfig;
use super::ledger_run::LedgerRun;
use super::output::{EventLog, RoundRecord, Series};
use super::population::{stream_rng, streams, Population, Role};

pub const SCENARIOS: [&str; 7] =
    ["ledger-convergence", "dc-ledger", "verification-loss", "adaptive-adl", "freshness", "style-participation", "attack"];

pub fn run_scenario(cfg: &SimConfig, name: &str) -> Result<EventLog> {
    cfg.validate()?;
    let series = match name {
        "ledger-convergence" => ledger_convergence(cfg)?,
        "dc-ledger" => dc_ledger(cfg)?,
        "verification-loss" => verification_loss(cfg)?,
        "adaptive-adl" => adaptive_adl(cfg)?,
        "freshness" => freshness(cfg)?,
        "style-participation" => style_participation(cfg)?,
        "attack" => attack(cfg)?,
        other => return Err(Error::UnknownScenario { name: other.to_string(), available: SCENARIOS.join(", ") }),
    };
    Ok(EventLog {
        scenario: name.to_string(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        interval_count: cfg.ledger.style_intervals,
        type_names: cfg.population.style_types.iter().map(|t| t.name.clone()).collect(),
        series,
    })
}

fn ledger_convergence(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.ledger_convergence;
    let sources: Vec<[f64; 2]> =
        cfg.population.style_types.iter().flat_map(|t| std::iter::repeat_n(t.range, t.count)).collect();
    let mut out = Vec::new();
    for (a, arrival) in sc.arrivals.iter().enumerate() {
        for &genesis in &sc.genesis {
            let run = LedgerRun {
                arrival: *arrival,
                arrival_scale: cfg.ledger.arrival_scale,
                round_length: cfg.ledger.round_length,
                genesis,
                rounds: sc.rounds,
                max_appends: None,
                rth: RthParams { alpha: cfg.ledger.tip_alpha, beta: cfg.ledger.tip_beta },
                intervals: cfg.ledger.intervals(),
                pow_difficulty: cfg.ledger.pow_difficulty,
                sources: sources.clone(),
            };
            let mut rng = stream_rng(cfg.seed, streams::LEDGER + ((a as u64) << 32) + genesis as u64);
            let (_, records) = run.run(cfg.seed, &mut rng)?;
            out.push(Series { variant: format!("{}-g{genesis}", arrival.name()), records });
        }
    }
    Ok(out)
}

fn dc_ledger(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.dc_ledger;
    let mut out = Vec::new();
    for (b, &beta) in sc.betas.iter().enumerate() {
        let run = LedgerRun {
            arrival: sc.arrival,
            arrival_scale: cfg.ledger.arrival_scale,
            round_length: cfg.ledger.round_length,
            genesis: sc.genesis,
            rounds: sc.appends + 1,
            max_appends: Some(sc.appends),
            rth: RthParams { alpha: sc.alpha, beta },
            intervals: cfg.ledger.intervals(),
            pow_difficulty: cfg.ledger.pow_difficulty,
            sources: sc.groups.clone(),
        };
        let mut rng = stream_rng(cfg.seed, streams::LEDGER + ((b as u64) << 40));
        let (_, records) = run.run(cfg.seed, &mut rng)?;
        out.push(Series { variant: format!("beta-{beta}"), records });
    }
    Ok(out)
}

/// Trains one model on the pooled data of a single style type and reports,
/// after every epoch, the mean test gap each style type's verifiers see.
fn verification_loss(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.verification_loss;
    let trained = cfg.type_index(&sc.trained_on).expect("validated");
    let env = Environment::new(cfg, Population::build(cfg)?)?;
    let icvs = &env.pop.icvs;
    let pooled = Dataset::concat(icvs.iter().filter(|i| i.style_type == trained).map(|i| &i.train))?;
    let types = cfg.population.style_types.len();
    let mut rng = stream_rng(cfg.seed, streams::BASELINE);
    let mut model = env.initial.clone();
    let mut records = Vec::with_capacity(sc.rounds);
    for round in 1..=sc.rounds {
        model = local_sgd(&model, &pooled, &cfg.learning.sgd, &mut rng)?;
        let mut sums = vec![0.0; types];
        let mut counts = vec![0usize; types];
        for icv in icvs {
            sums[icv.style_type] += test_gap(&model, &icv.test)?.value();
            counts[icv.style_type] += 1;
        }
        records.push(RoundRecord {
            round: round as u64,
            time: round as f64,
            loss: env.loss(&model)?,
            gap: test_gap(&model, &env.rsu_test)?.value(),
            type_gaps: sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect(),
            ..RoundRecord::default()
        });
    }
    Ok(vec![Series { variant: format!("trained-{}", sc.trained_on), records }])
}

fn adaptive_adl(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.adaptive_adl;
    let mut pop = Population::build(cfg)?;
    pop.assign_role(cfg.seed, 1, sc.poor_fraction, Role::Poor);
    pop.corrupt_poor(sc.poor_label_bias);
    let env = Environment::new(cfg, pop)?;
    let eps = cfg.learning.epsilon();
    let mut out = vec![Series {
        variant: "non-adaptive".into(),
        records: run_adl(&env, &AdlSettings::all(&env, Gate::Disabled, eps))?.records,
    }];
    for &g in &sc.reference_gaps {
        let settings = AdlSettings::all(&env, Gate::Fixed(g * sc.gap_scale), eps);
        out.push(Series { variant: format!("eg-{g}"), records: run_adl(&env, &settings)?.records });
    }
    Ok(out)
}

fn freshness(cfg: &SimConfig) -> Result<Vec<Series>> {
    let warmup = cfg.scenarios.freshness.warmup_epochs.unwrap_or(cfg.learning.warmup_epochs);
    let env = Environment::with_warmup(cfg, Population::build(cfg)?, warmup)?;
    let all = vec![true; env.pop.icvs.len()];
    Ok(vec![
        Series {
            variant: "adl".into(),
            records: run_adl(&env, &AdlSettings::all(&env, Gate::Disabled, cfg.learning.epsilon()))?.records,
        },
        Series { variant: "fedave".into(), records: run_fedave(&env, &all)? },
        Series { variant: "central".into(), records: run_central(&env, &all)? },
    ])
}

fn style_participation(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.style_participation;
    let varied = cfg.type_index(&sc.varied_type).expect("validated");
    let env = Environment::new(cfg, Population::build(cfg)?)?;
    let mut out = Vec::new();
    for &p in &sc.participation {
        let mut seen = 0usize;
        let participants: Vec<bool> = env
            .pop
            .icvs
            .iter()
            .map(|i| {
                if i.style_type != varied {
                    return true;
                }
                seen += 1;
                seen <= p
            })
            .collect();
        let settings = AdlSettings {
            mean_style: sc.mean_style.or(cfg.learning.mean_style),
            participants,
            ..AdlSettings::all(&env, Gate::Disabled, cfg.learning.epsilon())
        };
        out.push(Series { variant: format!("{}-{p}", sc.varied_type), records: run_adl(&env, &settings)?.records });
    }
    Ok(out)
}

fn attack(cfg: &SimConfig) -> Result<Vec<Series>> {
    let sc = &cfg.scenarios.attack;
    let mut out = Vec::new();
    for (k, &f) in sc.fractions.iter().enumerate() {
        let mut pop = Population::build(cfg)?;
        pop.assign_role(cfg.seed, 2 + k as u64, f, Role::Attacker);
        let env = Environment::new(cfg, pop)?;
        for (label, eps) in [("gated", cfg.learning.epsilon()), ("ungated", f64::INFINITY)] {
            let records = run_adl(&env, &AdlSettings::all(&env, Gate::Disabled, eps))?.records;
            out.push(Series { variant: format!("f{f}-{label}"), records });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario_is_an_error() {
        let err = run_scenario(&SimConfig::default(), "nope").unwrap_err();
        assert!(matches!(err, Error::UnknownScenario { ref name, .. } if name == "nope"));
    }
}
