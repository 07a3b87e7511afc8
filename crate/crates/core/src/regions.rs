//! Traffic regions, scope-gated delivery and cross-region authentication.
//!
//! A crossing leaves two parentless, zero-weight sites in the destination
//! ledger: a cross-regional site signed by the origin RSU and an
//! IdentityStone signed by the destination RSU. The crossing ICV's first
//! site there must approve exactly that pair. Everything needed to replay
//! authentication state or trace a vehicle lives in the ledgers themselves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{CryptoSuite, Digest, IdentityRef, SigningKey};
use crate::error::{Error, Result};
use crate::ledger::{AppendOutcome, Ledger, Rejection, TipSelection};
use crate::model::{Dataset, ModelParams};
use crate::site::{self, Site, SiteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u32);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// Deliver iff the knowledge's impact scope reaches the threshold.
pub fn delivery_decision(scope: u64, threshold: u64) -> bool {
    scope >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthState {
    Unauthenticated,
    Pending { stone: Digest, cross: Digest },
    Authenticated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: u32,
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub from: u32,
    pub to: u32,
    pub threshold: u64,
}

/// Region ids, adjacency and per-pair scope thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub regions: Vec<RegionSpec>,
    #[serde(default = "default_threshold")]
    pub default_threshold: u64,
    #[serde(default)]
    pub thresholds: Vec<ThresholdSpec>,
}

fn default_threshold() -> u64 {
    1
}

impl TopologyConfig {
    /// `n` regions in a row, each adjacent to the next.
    pub fn line(n: u32) -> Self {
        let regions = (0..n)
            .map(|i| RegionSpec {
                id: i,
                neighbors: [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten().collect(),
            })
            .collect();
        TopologyConfig { regions, default_threshold: 1, thresholds: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::config("topology.regions", "at least one region is required"));
        }
        let ids: BTreeSet<u32> = self.regions.iter().map(|r| r.id).collect();
        if ids.len() != self.regions.len() {
            return Err(Error::config("topology.regions", "region ids must be unique"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            for n in &r.neighbors {
                let field = format!("topology.regions[{i}].neighbors");
                if *n == r.id {
                    return Err(Error::config(field, "a region cannot neighbor itself"));
                }
                let Some(other) = self.regions.iter().find(|o| o.id == *n) else {
                    return Err(Error::config(field, format!("unknown region {n}")));
                };
                if !other.neighbors.contains(&r.id) {
                    return Err(Error::config(field, format!("adjacency {}-{n} is not symmetric", r.id)));
                }
            }
        }
        for (i, t) in self.thresholds.iter().enumerate() {
            if !ids.contains(&t.from) || !ids.contains(&t.to) {
                return Err(Error::config(format!("topology.thresholds[{i}]"), "unknown region"));
            }
        }
        Ok(())
    }

    /// RSU signing key for `region`, shared by all RSUs of that region.
    pub fn rsu_key(seed: u64, region: RegionId) -> SigningKey {
        SigningKey::derive(seed, "rsu", region.0 as u64)
    }
}

#[derive(Debug)]
pub struct Region {
    pub id: RegionId,
    pub ledger: Ledger,
    pub neighbors: BTreeSet<RegionId>,
    rsu_key: SigningKey,
    rsu: IdentityRef,
    present: BTreeSet<IdentityRef>,
}

impl Region {
    pub fn rsu(&self) -> IdentityRef {
        self.rsu
    }

    pub fn rsu_key(&self) -> &SigningKey {
        &self.rsu_key
    }

    pub fn is_present(&self, icv: &IdentityRef) -> bool {
        self.present.contains(icv)
    }

    pub fn present(&self) -> impl Iterator<Item = &IdentityRef> {
        self.present.iter()
    }
}

/// The crossing pair as appended to the destination ledger.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub cross: Site,
    pub stone: Site,
    pub delivered: bool,
}

/// The regions a vehicle passed through, newest first; the last entry is
/// where it started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub path: Vec<RegionId>,
}

impl Trace {
    pub fn origin(&self) -> RegionId {
        *self.path.last().expect("trace path is never empty")
    }
}

#[derive(Debug)]
pub struct Network {
    regions: BTreeMap<RegionId, Region>,
    rsu_regions: BTreeMap<IdentityRef, RegionId>,
    default_threshold: u64,
    thresholds: BTreeMap<(RegionId, RegionId), u64>,
    location: BTreeMap<IdentityRef, RegionId>,
    home: BTreeMap<IdentityRef, RegionId>,
    auth: BTreeMap<(IdentityRef, RegionId), AuthState>,
    crossings: u64,
}

impl Network {
    /// One empty ledger per region. `rsu_keys` must cover every region and
    /// be registered with the signature scheme used in later calls.
    pub fn new(topology: &TopologyConfig, rsu_keys: &BTreeMap<RegionId, SigningKey>, pow_difficulty: u32, crypto: &CryptoSuite) -> Result<Self> {
        topology.validate()?;
        let mut regions = BTreeMap::new();
        let mut rsu_regions = BTreeMap::new();
        for spec in &topology.regions {
            let id = RegionId(spec.id);
            let key = rsu_keys.get(&id).ok_or(Error::UnknownRegion(id))?.clone();
            let rsu = crypto.signatures.fingerprint(&key);
            rsu_regions.insert(rsu, id);
            regions.insert(
                id,
                Region {
                    id,
                    ledger: Ledger::new(pow_difficulty),
                    neighbors: spec.neighbors.iter().map(|&n| RegionId(n)).collect(),
                    rsu_key: key,
                    rsu,
                    present: BTreeSet::new(),
                },
            );
        }
        let thresholds = topology
            .thresholds
            .iter()
            .map(|t| ((RegionId(t.from), RegionId(t.to)), t.threshold))
            .collect();
        Ok(Network {
            regions,
            rsu_regions,
            default_threshold: topology.default_threshold,
            thresholds,
            location: BTreeMap::new(),
            home: BTreeMap::new(),
            auth: BTreeMap::new(),
            crossings: 0,
        })
    }

    pub fn region(&self, id: RegionId) -> Result<&Region> {
        self.regions.get(&id).ok_or(Error::UnknownRegion(id))
    }

    pub fn region_mut(&mut self, id: RegionId) -> Result<&mut Region> {
        self.regions.get_mut(&id).ok_or(Error::UnknownRegion(id))
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn threshold(&self, from: RegionId, to: RegionId) -> u64 {
        self.thresholds.get(&(from, to)).copied().unwrap_or(self.default_threshold)
    }

    /// Places an ICV in its home region, where it is authenticated from the start.
    pub fn register_icv(&mut self, icv: IdentityRef, home: RegionId) -> Result<()> {
        self.region_mut(home)?.present.insert(icv);
        self.location.insert(icv, home);
        self.home.insert(icv, home);
        self.auth.insert((icv, home), AuthState::Authenticated);
        Ok(())
    }

    pub fn location(&self, icv: &IdentityRef) -> Option<RegionId> {
        self.location.get(icv).copied()
    }

    pub fn auth_state(&self, icv: &IdentityRef, region: RegionId) -> AuthState {
        self.auth.get(&(*icv, region)).copied().unwrap_or(AuthState::Unauthenticated)
    }

    /// The parents the ICV's next site in `region` must approve, if a
    /// crossing is pending there.
    pub fn required_parents(&self, icv: &IdentityRef, region: RegionId) -> Option<TipSelection> {
        match self.auth_state(icv, region) {
            AuthState::Pending { stone, cross } => Some(TipSelection { first: stone, second: cross }),
            _ => None,
        }
    }

    /// Moves `icv` into the neighboring region `to`. The carried knowledge
    /// travels in the cross-regional site only when its scope passes the
    /// pair's threshold; the IdentityStone is issued either way.
    pub fn initiate_crossing(
        &mut self,
        icv: IdentityRef,
        to: RegionId,
        knowledge: Option<(ModelParams, u64)>,
        crypto: &CryptoSuite,
    ) -> Result<Crossing> {
        let from = self.location(&icv).ok_or(Error::NotPresent(to))?;
        self.region(to)?;
        if from == to || !self.region(from)?.neighbors.contains(&to) {
            return Err(Error::NotNeighbors { from, to });
        }
        let threshold = self.threshold(from, to);
        let (carried, scope) = match knowledge {
            Some((k, s)) if delivery_decision(s, threshold) => (Some(k), s),
            Some((_, s)) => (None, s),
            None => (None, 0),
        };
        let delivered = carried.is_some();
        let pow = self.region(to)?.ledger.pow_difficulty();
        let serial = self.crossings;
        self.crossings += 1;
        let cross = Site::cross_regional(icv, serial, carried, scope).issue(&self.region(from)?.rsu_key, pow, crypto);
        let stone = Site::identity_stone(icv, serial).issue(&self.region(to)?.rsu_key, pow, crypto);

        let dest = self.region_mut(to)?;
        for s in [&cross, &stone] {
            if let AppendOutcome::Rejected(r) = dest.ledger.append_verified(s.clone(), crypto) {
                return Err(Error::MalformedSite(format!("authentication site refused: {r}")));
            }
        }
        dest.present.insert(icv);
        self.region_mut(from)?.present.remove(&icv);
        self.location.insert(icv, to);
        self.auth.insert((icv, to), AuthState::Pending { stone: stone.digest, cross: cross.digest });
        Ok(Crossing { cross, stone, delivered })
    }

    /// Submits an ICV's site to `region`. While a crossing is pending the
    /// site must approve exactly the crossing pair and skips the gap check;
    /// afterwards it goes through the ordinary verify-and-append path with
    /// `selection`.
    #[allow(clippy::too_many_arguments)]
    pub fn submit_site(
        &mut self,
        icv: IdentityRef,
        region: RegionId,
        site: Site,
        selection: &TipSelection,
        verifier_testset: &Dataset,
        epsilon: f64,
        crypto: &CryptoSuite,
    ) -> Result<AppendOutcome> {
        let state = self.auth_state(&icv, region);
        let r = self.region_mut(region)?;
        if site.issuer != icv || !r.present.contains(&icv) {
            return Ok(AppendOutcome::Rejected(Rejection::Unauthenticated));
        }
        Ok(match state {
            AuthState::Unauthenticated => AppendOutcome::Rejected(Rejection::Unauthenticated),
            AuthState::Authenticated => r.ledger.verify_and_append(site, selection, verifier_testset, epsilon, crypto),
            AuthState::Pending { stone, cross } => {
                let parents: BTreeSet<Digest> = site.parents.iter().copied().collect();
                if site.kind != SiteKind::Ordinary || parents != BTreeSet::from([stone, cross]) {
                    AppendOutcome::Rejected(Rejection::WrongAuthParents)
                } else {
                    let out = r.ledger.append_verified(site, crypto);
                    if out.is_appended() {
                        self.auth.insert((icv, region), AuthState::Authenticated);
                    }
                    out
                }
            }
        })
    }

    /// Follows the ICV's cross-regional sites back through the regions it
    /// came from, verifying each against the origin RSU. Each region's
    /// crossings are consumed newest first, so revisits are handled.
    pub fn trace_origin(&self, icv: &IdentityRef, crypto: &CryptoSuite) -> Result<Trace> {
        let start = match self.location(icv) {
            Some(r) => r,
            None => return Err(Error::NotPresent(RegionId(u32::MAX))),
        };
        let mut consumed: BTreeMap<RegionId, usize> = BTreeMap::new();
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let ledger = &self.region(cur)?.ledger;
            let crossings: Vec<&Site> = ledger
                .sites()
                .iter()
                .filter(|s| s.kind == SiteKind::CrossRegional && s.payload.subject() == Some(icv))
                .collect();
            let used = consumed.entry(cur).or_default();
            if *used >= crossings.len() {
                break;
            }
            let cross = crossings[crossings.len() - 1 - *used];
            *used += 1;
            if !site::verify(cross, crypto.signatures.as_ref()) {
                return Err(Error::ForgedCrossSite(cross.digest));
            }
            let Some(&origin) = self.rsu_regions.get(&cross.issuer) else {
                return Err(Error::ForgedCrossSite(cross.digest));
            };
            path.push(origin);
            cur = origin;
        }
        Ok(Trace { path })
    }

    pub fn home(&self, icv: &IdentityRef) -> Option<RegionId> {
        self.home.get(icv).copied()
    }
}

/// Authentication state of every crossing ICV, rebuilt from one ledger.
/// ICVs with no crossing into this ledger do not appear.
pub fn replay_auth_states(ledger: &Ledger) -> BTreeMap<IdentityRef, AuthState> {
    let mut pending_cross: BTreeMap<IdentityRef, Digest> = BTreeMap::new();
    let mut states = BTreeMap::new();
    for s in ledger.sites() {
        match s.kind {
            SiteKind::CrossRegional => {
                if let Some(subject) = s.payload.subject() {
                    pending_cross.insert(*subject, s.digest);
                }
            }
            SiteKind::IdentityStone => {
                if let Some(subject) = s.payload.subject() {
                    if let Some(cross) = pending_cross.remove(subject) {
                        states.insert(*subject, AuthState::Pending { stone: s.digest, cross });
                    }
                }
            }
            SiteKind::Ordinary => {
                if let Some(AuthState::Pending { stone, cross }) = states.get(&s.issuer) {
                    let parents: BTreeSet<Digest> = s.parents.iter().copied().collect();
                    if parents == BTreeSet::from([*stone, *cross]) {
                        states.insert(s.issuer, AuthState::Authenticated);
                    }
                }
            }
            SiteKind::Genesis => {}
        }
    }
    states
}
