//! Asynchronous learning over the regional ledgers, plus the synchronous
//! and centralized baselines it is compared against.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::crypto::{CryptoSuite, SigningKey};
use crate::error::{Error, Result};
use crate::ledger::{AppendOutcome, Rejection, RthParams, TipSnapshot};
use crate::learning::{
    adaptive_gate, fedave_baseline, least_squares, local_sgd, rsu_accept, GateDecision, GlobalModel, MeanStyle, RsuDecision,
    UpdateContext,
};
use crate::model::{test_gap, Dataset, ModelParams, StyleIndicator};
use crate::regions::{Network, RegionId, TopologyConfig};
use crate::site::Site;

use super::config::{AttackMode, SimConfig};
use super::events::EventQueue;
use super::ledger_run::snapshot_record;
use super::output::RoundRecord;
use super::population::{stream_rng, streams, Icv, Population, Role};

/// Everything the variants of one seeded run share, so that comparisons
/// between variants are paired.
#[derive(Debug, Clone)]
pub struct Environment {
    pub cfg: SimConfig,
    pub pop: Population,
    pub rsu_test: Dataset,
    /// Clean data at the style of every non-attacking ICV.
    pub eval: Dataset,
    /// The global model every run starts from.
    pub initial: ModelParams,
    pub rsu_keys: BTreeMap<RegionId, SigningKey>,
}

impl Environment {
    /// The RSU test set and warmup data are drawn uniformly over styles.
    /// The initial global model is `learning.warmup_epochs` of SGD from zero
    /// on the warmup data.
    pub fn new(cfg: &SimConfig, pop: Population) -> Result<Self> {
        Self::with_warmup(cfg, pop, cfg.learning.warmup_epochs)
    }

    pub fn with_warmup(cfg: &SimConfig, pop: Population, warmup_epochs: usize) -> Result<Self> {
        let mut rng = stream_rng(cfg.seed, streams::RSU);
        let l = &cfg.learning;
        let rsu_test = pop.task.gen_mixed_dataset(&mut rng, l.rsu_test_size, 0.0, 1.0)?;
        let eval = pop.eval_set(&mut rng, cfg.population.eval_size, |i| i.role != Role::Attacker)?;
        let zero = ModelParams::zeros(cfg.task.feature_dim);
        let initial = if l.warmup_size == 0 || warmup_epochs == 0 {
            zero
        } else {
            let warm = pop.task.gen_mixed_dataset(&mut rng, l.warmup_size, 0.0, 1.0)?;
            let sgd = crate::learning::SgdConfig { epochs: warmup_epochs, ..l.sgd };
            local_sgd(&zero, &warm, &sgd, &mut rng)?
        };
        let rsu_keys = cfg
            .topology
            .regions
            .iter()
            .map(|r| (RegionId(r.id), TopologyConfig::rsu_key(cfg.seed, RegionId(r.id))))
            .collect();
        Ok(Environment { cfg: cfg.clone(), pop, rsu_test, eval, initial, rsu_keys })
    }

    pub fn crypto(&self) -> CryptoSuite {
        CryptoSuite::with_registry(self.pop.registry(self.rsu_keys.values()))
    }

    pub fn loss(&self, model: &ModelParams) -> Result<f64> {
        self.eval.mse(model)
    }

    fn region_ids(&self) -> Vec<RegionId> {
        self.rsu_keys.keys().copied().collect()
    }

    fn boundaries(&self) -> Vec<f64> {
        let h = self.cfg.ledger.round_length;
        let n = (self.cfg.learning.horizon / h + 1e-9).floor() as usize;
        (1..=n).map(|j| j as f64 * h).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Every finished task is uploaded.
    Disabled,
    /// Upload iff the local test gap is at most this value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdlSettings {
    pub gate: Gate,
    /// RSU acceptance and tip verification threshold.
    pub epsilon: f64,
    /// Fixed population style mean; `None` tracks accepted sites.
    pub mean_style: Option<f64>,
    pub attack_mode: AttackMode,
    /// `participants[i]` says whether ICV `i` trains at all.
    pub participants: Vec<bool>,
}

impl AdlSettings {
    pub fn all(env: &Environment, gate: Gate, epsilon: f64) -> Self {
        AdlSettings {
            gate,
            epsilon,
            mean_style: env.cfg.learning.mean_style,
            attack_mode: env.cfg.scenarios.attack.mode,
            participants: vec![true; env.pop.icvs.len()],
        }
    }
}

#[derive(Debug)]
pub struct AdlOutcome {
    pub records: Vec<RoundRecord>,
    pub network: Network,
    pub models: BTreeMap<RegionId, GlobalModel>,
    pub crypto: CryptoSuite,
    /// Every crossing made, in order: (ICV index, from, to, delivered).
    pub crossings: Vec<(u32, RegionId, RegionId, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    /// Recorded before tasks finishing at the same instant are processed.
    Boundary,
    TaskDone,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counters {
    issued: u64,
    accepted: u64,
    rejected_gap: u64,
    rejected_parent: u64,
    rejected_other: u64,
}

impl Counters {
    fn rejected(&self) -> u64 {
        self.rejected_gap + self.rejected_parent + self.rejected_other
    }
}

fn corrupt<R: Rng + ?Sized>(mode: AttackMode, local: &ModelParams, rng: &mut R) -> Result<ModelParams> {
    match mode {
        AttackMode::SignFlip | AttackMode::BiasedStyle => ModelParams::new(local.as_slice().iter().map(|v| -v).collect()),
        AttackMode::Random => ModelParams::new((0..local.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
    }
}

struct Task {
    base: ModelParams,
}

/// Runs asynchronous learning until the horizon. Each participating ICV
/// repeatedly pulls its region's global model, trains for one task, then
/// possibly crosses to a neighboring region, and finally uploads if its
/// gate allows. Uploads are screened by the RSU, written to the region's
/// ledger and mixed into the global model.
pub fn run_adl(env: &Environment, settings: &AdlSettings) -> Result<AdlOutcome> {
    let cfg = &env.cfg;
    let crypto = env.crypto();
    let pow = cfg.ledger.pow_difficulty;
    let horizon = cfg.learning.horizon;
    let rth = RthParams { alpha: cfg.ledger.tip_alpha, beta: cfg.ledger.tip_beta };
    let intervals = cfg.ledger.intervals();
    let regions = env.region_ids();
    let mut rng = stream_rng(cfg.seed, streams::EVENTS);

    let mut network = Network::new(&cfg.topology, &env.rsu_keys, pow, &crypto)?;
    let mut models = BTreeMap::new();
    let mut means: BTreeMap<RegionId, MeanStyle> = BTreeMap::new();
    for (g, &r) in regions.iter().enumerate() {
        let key = &env.rsu_keys[&r];
        let genesis = Site::genesis(env.initial.clone(), StyleIndicator::default(), g as u64).issue(key, pow, &crypto);
        if let AppendOutcome::Rejected(rej) = network.region_mut(r)?.ledger.append_verified(genesis, &crypto) {
            return Err(Error::MalformedSite(format!("genesis refused: {rej}")));
        }
        models.insert(r, GlobalModel::new(env.initial.clone(), &env.rsu_test)?);
        means.insert(r, MeanStyle::default());
    }

    let icvs = &env.pop.icvs;
    if settings.participants.len() != icvs.len() {
        return Err(Error::DimensionMismatch { expected: icvs.len(), got: settings.participants.len() });
    }
    let mut icv_rngs: Vec<ChaCha8Rng> = icvs.iter().map(|i| stream_rng(cfg.seed, streams::ICV_TRAIN + i.index as u64)).collect();
    let mut tasks: BTreeMap<u32, Task> = BTreeMap::new();
    let mut queue = EventQueue::new();
    for (i, icv) in icvs.iter().enumerate() {
        network.register_icv(icv.id, regions[i % regions.len()])?;
        if settings.participants[i] {
            let r = regions[i % regions.len()];
            tasks.insert(icv.index, Task { base: models[&r].params.clone() });
            let done = icv.delay.sample(&mut icv_rngs[i]);
            if done <= horizon {
                queue.push(done, icv.index, Kind::TaskDone);
            }
        }
    }
    let boundaries = env.boundaries();
    for (j, &b) in boundaries.iter().enumerate() {
        queue.push(b, j as u32, Kind::Boundary);
    }

    let mut round_counts = Counters::default();
    let mut totals = Counters::default();
    let mut uploads = 0u64;
    let mut attack = (0u64, 0u64, 0u64);
    let mut crossings = Vec::new();
    let mut records = Vec::with_capacity(boundaries.len());
    let eps = settings.epsilon;

    while let Some(ev) = queue.pop() {
        let t = ev.time;
        match ev.kind {
            Kind::Boundary => {
                let round = ev.actor as u64 + 1;
                records.push(record(env, &network, &models, round, t, &intervals, &round_counts, &totals, uploads, attack)?);
                round_counts = Counters::default();
            }
            Kind::TaskDone => {
                let i = ev.actor as usize;
                let icv: &Icv = &icvs[i];
                let task = tasks.remove(&ev.actor).expect("running task");
                let irng = &mut icv_rngs[i];
                let trained = local_sgd(&task.base, &icv.train, &cfg.learning.sgd, irng)?;
                let attacker = icv.role == Role::Attacker;
                let local = if attacker { corrupt(settings.attack_mode, &trained, irng)? } else { trained };

                let mut region = network.location(&icv.id).expect("registered");
                if cfg.mobility.crossing_rate > 0.0 && rng.random::<f64>() < cfg.mobility.crossing_rate {
                    let neighbors: Vec<RegionId> = network.region(region)?.neighbors.iter().copied().collect();
                    if !neighbors.is_empty() {
                        let to = neighbors[rng.random_range(0..neighbors.len())];
                        let scope = rng.random_range(0..=cfg.mobility.max_scope);
                        let c = network.initiate_crossing(icv.id, to, Some((local.clone(), scope)), &crypto)?;
                        crossings.push((icv.index, region, to, c.delivered));
                        region = to;
                    }
                }

                let upload = attacker
                    || match settings.gate {
                        Gate::Disabled => true,
                        Gate::Fixed(e_g) => adaptive_gate(test_gap(&local, &icv.test)?, e_g) == GateDecision::Upload,
                    };
                if upload {
                    uploads += 1;
                    round_counts.issued += 1;
                    totals.issued += 1;
                    if attacker {
                        attack.0 += 1;
                    }
                    let mean_style = settings.mean_style.unwrap_or_else(|| means[&region].value());
                    let claimed = if attacker && settings.attack_mode == AttackMode::BiasedStyle {
                        StyleIndicator::new(mean_style.clamp(0.0, 1.0))?
                    } else {
                        icv.style
                    };
                    let verdict = if rsu_accept(&local, &env.rsu_test, eps)? == RsuDecision::Rejected {
                        // `None` marks an RSU gap rejection
                        Err(None)
                    } else {
                        let sel = match network.required_parents(&icv.id, region) {
                            Some(sel) => sel,
                            None => TipSnapshot::of(&network.region(region)?.ledger).select(claimed.value(), rth, &mut rng)?,
                        };
                        let scope = rng.random_range(0..=cfg.mobility.max_scope);
                        let site = Site::ordinary(local.clone(), claimed, scope, sel.parents()).issue(&icv.key, pow, &crypto);
                        match network.submit_site(icv.id, region, site, &sel, &icv.test, eps, &crypto)? {
                            AppendOutcome::Appended { .. } => Ok(()),
                            AppendOutcome::Rejected(r) => Err(Some(r)),
                        }
                    };
                    match verdict {
                        Ok(()) => {
                            let ctx = UpdateContext {
                                t,
                                horizon,
                                style: claimed,
                                mean_style,
                                rule: cfg.learning.alpha_rule,
                            };
                            let next = models[&region].async_update(&local, &ctx, &env.rsu_test)?;
                            models.insert(region, next);
                            means.get_mut(&region).expect("region").push(claimed);
                            round_counts.accepted += 1;
                            totals.accepted += 1;
                            if attacker {
                                attack.1 += 1;
                            }
                        }
                        Err(r) => {
                            if attacker && r.is_none() {
                                attack.2 += 1;
                            }
                            let bump = |c: &mut Counters| match r {
                                None => c.rejected_gap += 1,
                                Some(Rejection::InvalidParent { .. }) => c.rejected_parent += 1,
                                Some(_) => c.rejected_other += 1,
                            };
                            bump(&mut round_counts);
                            bump(&mut totals);
                        }
                    }
                }

                let next_base = models[&region].params.clone();
                tasks.insert(ev.actor, Task { base: next_base });
                let done = t + icv.delay.sample(&mut icv_rngs[i]);
                if done <= horizon {
                    queue.push(done, ev.actor, Kind::TaskDone);
                }
            }
        }
    }

    Ok(AdlOutcome { records, network, models, crypto, crossings })
}

#[allow(clippy::too_many_arguments)]
fn record(
    env: &Environment,
    network: &Network,
    models: &BTreeMap<RegionId, GlobalModel>,
    round: u64,
    time: f64,
    intervals: &crate::analysis::StyleIntervals,
    round_counts: &Counters,
    totals: &Counters,
    uploads: u64,
    attack: (u64, u64, u64),
) -> Result<RoundRecord> {
    let mut rec = RoundRecord { round, time, ..RoundRecord::default() };
    let mut first = true;
    for region in network.regions() {
        let snap = snapshot_record(&region.ledger, round, time, intervals);
        rec.sites += snap.sites;
        rec.tip_count += snap.tip_count;
        if first {
            rec.tips_per_interval = snap.tips_per_interval;
            rec.assortativity = snap.assortativity;
            first = false;
        } else {
            rec.tips_per_interval.iter_mut().zip(&snap.tips_per_interval).for_each(|(a, b)| *a += b);
        }
        rec.region_sites.push(snap.sites);
    }
    let n = models.len() as f64;
    rec.loss = models.values().map(|m| env.loss(&m.params)).sum::<Result<f64>>()? / n;
    rec.gap = models.values().map(|m| m.reference_gap).sum::<f64>() / n;
    rec.issued = round_counts.issued;
    rec.accepted = round_counts.accepted;
    rec.rejected = round_counts.rejected();
    rec.rejected_gap_exceeded = round_counts.rejected_gap;
    rec.rejected_invalid_parent = round_counts.rejected_parent;
    rec.rejected_other = round_counts.rejected_other;
    rec.issued_total = totals.issued;
    rec.accepted_total = totals.accepted;
    rec.rejected_total = totals.rejected();
    rec.uploads_total = uploads;
    rec.bandwidth_mb = uploads as f64 * env.cfg.learning.model_size_mb;
    rec.attack_issued_total = attack.0;
    rec.attack_accepted_total = attack.1;
    rec.attack_rejected_gap_total = attack.2;
    rec.crossings_total = network_crossings(network);
    Ok(rec)
}

fn network_crossings(network: &Network) -> u64 {
    network
        .regions()
        .map(|r| r.ledger.sites().iter().filter(|s| s.kind == crate::site::SiteKind::CrossRegional).count() as u64)
        .sum()
}

/// Synchronous rounds: every participant trains from the same global model,
/// the round lasts as long as its slowest member, then the RSU averages.
pub fn run_fedave(env: &Environment, participants: &[bool]) -> Result<Vec<RoundRecord>> {
    let cfg = &env.cfg;
    let members: Vec<&Icv> = env
        .pop
        .icvs
        .iter()
        .zip(participants)
        .filter(|(i, &p)| p && i.role != Role::Attacker)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rngs: Vec<ChaCha8Rng> = members.iter().map(|i| stream_rng(cfg.seed, streams::ICV_TRAIN + i.index as u64)).collect();
    let mut changes: Vec<(f64, ModelParams, u64)> = vec![(0.0, env.initial.clone(), 0)];
    let mut t = 0.0;
    let mut uploads = 0u64;
    loop {
        let phi = &changes.last().expect("initial").1;
        let mut locals = Vec::with_capacity(members.len());
        let mut longest: f64 = 0.0;
        for (icv, r) in members.iter().zip(rngs.iter_mut()) {
            locals.push(local_sgd(phi, &icv.train, &cfg.learning.sgd, r)?);
            longest = longest.max(icv.delay.sample(r));
        }
        if t + longest > cfg.learning.horizon {
            break;
        }
        t += longest;
        uploads += members.len() as u64;
        changes.push((t, fedave_baseline(&locals)?, uploads));
    }
    env.boundaries()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let (_, phi, up) = changes.iter().rev().find(|c| c.0 <= b).expect("initial model at time 0");
            Ok(RoundRecord {
                round: j as u64 + 1,
                time: b,
                loss: env.loss(phi)?,
                gap: test_gap(phi, &env.rsu_test)?.value(),
                uploads_total: *up,
                bandwidth_mb: *up as f64 * cfg.learning.model_size_mb,
                ..RoundRecord::default()
            })
        })
        .collect()
}

/// Least squares on the pooled training data of every participant; the
/// loss is constant over rounds.
pub fn run_central(env: &Environment, participants: &[bool]) -> Result<Vec<RoundRecord>> {
    let parts: Vec<&Dataset> = env
        .pop
        .icvs
        .iter()
        .zip(participants)
        .filter(|(i, &p)| p && i.role != Role::Attacker)
        .map(|(i, _)| &i.train)
        .collect();
    let model = least_squares(&Dataset::concat(parts)?)?;
    let loss = env.loss(&model)?;
    let gap = test_gap(&model, &env.rsu_test)?.value();
    Ok(env
        .boundaries()
        .iter()
        .enumerate()
        .map(|(j, &b)| RoundRecord { round: j as u64 + 1, time: b, loss, gap, ..RoundRecord::default() })
        .collect())
}
