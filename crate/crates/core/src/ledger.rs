//! Append-only DAG ledger, tip selection and style clustering metrics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::crypto::{CryptoSuite, Digest};
use crate::error::{Error, Result};
use crate::model::{test_gap, Dataset};
use crate::site::{self, Site, SiteKind};

/// Why a site was refused. The ledger is unchanged after any rejection.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Rejection {
    #[error("malformed site: {0}")]
    Malformed(String),
    #[error("digest does not match the site contents")]
    DigestMismatch,
    #[error("proof-of-work below the required difficulty")]
    InvalidPow,
    #[error("signature does not verify against the issuer")]
    InvalidSignature,
    #[error("site is already in the ledger")]
    Duplicate,
    #[error("parent {0} is not in the ledger")]
    UnknownParent(Digest),
    #[error("parents do not match the tip selection")]
    SelectionMismatch,
    #[error("parent {parent} has test gap {gap} above the threshold")]
    InvalidParent { parent: Digest, gap: f64 },
    #[error("issuer is not authenticated in this region")]
    Unauthenticated,
    #[error("first site after a crossing must approve exactly its IdentityStone and cross-regional site")]
    WrongAuthParents,
}

impl Rejection {
    /// Stable short code used in event logs.
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Malformed(_) => "malformed",
            Rejection::DigestMismatch => "digest-mismatch",
            Rejection::InvalidPow => "invalid-pow",
            Rejection::InvalidSignature => "invalid-signature",
            Rejection::Duplicate => "duplicate",
            Rejection::UnknownParent(_) => "unknown-parent",
            Rejection::SelectionMismatch => "selection-mismatch",
            Rejection::InvalidParent { .. } => "invalid-parent",
            Rejection::Unauthenticated => "unauthenticated",
            Rejection::WrongAuthParents => "wrong-auth-parents",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AppendOutcome {
    /// `approved_tips` is how many of the parents were tips before the append.
    Appended { digest: Digest, approved_tips: usize },
    Rejected(Rejection),
}

impl AppendOutcome {
    pub fn is_appended(&self) -> bool {
        matches!(self, AppendOutcome::Appended { .. })
    }
}

/// The two tips a new site approves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TipSelection {
    pub first: Digest,
    pub second: Digest,
}

impl TipSelection {
    pub fn parents(&self) -> [Digest; 2] {
        [self.first, self.second]
    }
}

/// Weights of the RTH-TSA rule: `alpha` on parent cumulative weight,
/// `beta` on squared style distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RthParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Marks an unused parent slot.
const NO_PARENT: u32 = u32::MAX;

/// Growable Fenwick tree over a difference array. Adding `v` at `k - 1`
/// raises every position below `k`; a position's total is the suffix sum.
#[derive(Debug, Clone, Default)]
struct PrefixAdds {
    tree: Vec<f64>,
    total: f64,
}

impl PrefixAdds {
    fn prefix(&self, mut j: usize) -> f64 {
        let mut s = 0.0;
        while j > 0 {
            s += self.tree[j - 1];
            j &= j - 1;
        }
        s
    }

    fn push(&mut self) {
        let i = self.tree.len() + 1;
        let v = self.prefix(i - 1) - self.prefix(i - (i & i.wrapping_neg()));
        self.tree.push(v);
    }

    /// Adds `v` to positions `0..k`.
    fn add_below(&mut self, k: usize, v: f64) {
        self.total += v;
        let mut i = k;
        while i <= self.tree.len() {
            self.tree[i - 1] += v;
            i += i & i.wrapping_neg();
        }
    }

    fn at(&self, j: usize) -> f64 {
        self.total - self.prefix(j)
    }
}

/// Pearson correlation accumulator over (child, parent) style pairs.
#[derive(Debug, Clone, Copy, Default)]
struct Comoment {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Comoment {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n;
        self.sxx += dx * (x - self.mean_x);
        self.syy += dy * (y - self.mean_y);
        self.sxy += dx * (y - self.mean_y);
    }

    fn correlation(&self) -> f64 {
        const DEGENERATE: f64 = 1e-24;
        if self.n < 2.0 || self.sxx / self.n <= DEGENERATE || self.syy / self.n <= DEGENERATE {
            return 0.0;
        }
        (self.sxy / (self.sxx * self.syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Single-writer DAG of sites.
///
/// Cumulative weights are kept current on every append. Each site records
/// the longest prefix of the ledger that lies entirely in its ancestry; the
/// new site's weight goes to that prefix as one range update, and only the
/// ancestors past it are walked individually.
#[derive(Clone)]
pub struct Ledger {
    pow_difficulty: u32,
    sites: Vec<Site>,
    // Per-site arrays indexed by insertion order, kept flat so the
    // ancestor walk stays cache friendly.
    cw: Vec<f64>,
    cw_prefix: PrefixAdds,
    covered: Vec<u32>,
    parent_idx: Vec<[u32; 2]>,
    children: Vec<Vec<u32>>,
    index: HashMap<Digest, u32>,
    tips: BTreeSet<u32>,
    stamp: Vec<u32>,
    generation: u32,
    edges: Comoment,
    round: u64,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("sites", &self.sites.len())
            .field("tips", &self.tips.len())
            .field("round", &self.round)
            .finish()
    }
}

impl Ledger {
    pub fn new(pow_difficulty: u32) -> Self {
        Ledger {
            pow_difficulty,
            sites: Vec::new(),
            cw: Vec::new(),
            cw_prefix: PrefixAdds::default(),
            covered: Vec::new(),
            parent_idx: Vec::new(),
            children: Vec::new(),
            index: HashMap::new(),
            tips: BTreeSet::new(),
            stamp: Vec::new(),
            generation: 0,
            edges: Comoment::default(),
            round: 0,
        }
    }

    pub fn pow_difficulty(&self) -> u32 {
        self.pow_difficulty
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.index.contains_key(digest)
    }

    pub fn get(&self, digest: &Digest) -> Option<&Site> {
        self.index.get(digest).map(|&i| &self.sites[i as usize])
    }

    /// Sites in insertion order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn cumulative_weight(&self, digest: &Digest) -> Option<f64> {
        self.index.get(digest).map(|&i| self.cw_at(i as usize))
    }

    /// Digests of the sites that directly approve `digest`.
    pub fn approvers(&self, digest: &Digest) -> Option<Vec<Digest>> {
        let i = *self.index.get(digest)?;
        Some(self.children[i as usize].iter().map(|&c| self.sites[c as usize].digest).collect())
    }

    /// Sites with no approvers, special sites included.
    pub fn tips(&self) -> impl Iterator<Item = &Site> + '_ {
        self.tips.iter().map(|&i| &self.sites[i as usize])
    }

    pub fn is_tip(&self, digest: &Digest) -> bool {
        self.index.get(digest).is_some_and(|i| self.tips.contains(i))
    }

    /// Tips that tip selection may return: genesis and ordinary sites only.
    pub fn selectable_tips(&self) -> impl Iterator<Item = &Site> + '_ {
        self.tips().filter(|s| !s.kind.is_special())
    }

    /// The tip-count metric.
    pub fn tip_count(&self) -> usize {
        self.selectable_tips().count()
    }

    /// Selectable tips per style interval; `bounds` are the interior cut points.
    pub fn tip_count_by_interval(&self, bounds: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; bounds.len() + 1];
        for s in self.selectable_tips() {
            counts[interval_of(s.feature.value(), bounds)] += 1;
        }
        counts
    }

    /// Sum of the cumulative weights of the sites `digest` approves; 0 for
    /// parentless sites.
    pub fn parent_weight(&self, digest: &Digest) -> Option<f64> {
        let i = *self.index.get(digest)?;
        Some(self.parent_weight_at(i as usize))
    }

    fn parent_weight_at(&self, i: usize) -> f64 {
        self.parent_idx[i].iter().filter(|&&p| p != NO_PARENT).map(|&p| self.cw_at(p as usize)).sum()
    }

    fn cw_at(&self, i: usize) -> f64 {
        self.cw[i] + self.cw_prefix.at(i)
    }

    /// Pearson correlation of child and parent style over approval edges.
    /// Edges into special sites carry no style and are skipped.
    pub fn style_assortativity(&self) -> f64 {
        self.edges.correlation()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.n as usize
    }

    /// Integrity checks shared by every append path.
    pub fn check_integrity(&self, site: &Site, crypto: &CryptoSuite) -> std::result::Result<(), Rejection> {
        site.check_shape().map_err(|e| Rejection::Malformed(e.to_string()))?;
        if !site.digest_matches(crypto.digest.as_ref()) {
            return Err(Rejection::DigestMismatch);
        }
        if self.contains(&site.digest) {
            return Err(Rejection::Duplicate);
        }
        if !site::pow_verify(site, self.pow_difficulty, crypto.digest.as_ref()) {
            return Err(Rejection::InvalidPow);
        }
        if !site::verify(site, crypto.signatures.as_ref()) {
            return Err(Rejection::InvalidSignature);
        }
        if let Some(p) = site.parents.iter().find(|p| !self.contains(p)) {
            return Err(Rejection::UnknownParent(*p));
        }
        Ok(())
    }

    /// Appends after integrity checks only. Used for genesis sites, the
    /// special authentication sites and replay.
    pub fn append_verified(&mut self, site: Site, crypto: &CryptoSuite) -> AppendOutcome {
        match self.check_integrity(&site, crypto) {
            Ok(()) => self.insert(site),
            Err(r) => AppendOutcome::Rejected(r),
        }
    }

    /// Verifies `site` and the knowledge of the tips it approves against
    /// `verifier_testset`, then appends it if every gap is within `epsilon`.
    /// Parents that carry no knowledge are not gap-checked, and an infinite
    /// `epsilon` skips the gap check entirely.
    pub fn verify_and_append(
        &mut self,
        site: Site,
        selection: &TipSelection,
        verifier_testset: &Dataset,
        epsilon: f64,
        crypto: &CryptoSuite,
    ) -> AppendOutcome {
        if let Err(r) = self.check_integrity(&site, crypto) {
            return AppendOutcome::Rejected(r);
        }
        if site.kind != SiteKind::Ordinary || site.parents[..] != selection.parents()[..] {
            return AppendOutcome::Rejected(Rejection::SelectionMismatch);
        }
        let distinct: BTreeSet<Digest> = site.parents.iter().copied().collect();
        for parent in distinct.into_iter().filter(|_| epsilon != f64::INFINITY) {
            let Some(knowledge) = self.get(&parent).and_then(|p| p.payload.knowledge()) else {
                continue;
            };
            let gap = test_gap(knowledge, verifier_testset).map_or(f64::INFINITY, |g| g.value());
            if !(gap <= epsilon) {
                return AppendOutcome::Rejected(Rejection::InvalidParent { parent, gap });
            }
        }
        self.insert(site)
    }

    fn insert(&mut self, site: Site) -> AppendOutcome {
        let i = self.sites.len() as u32;
        let mut parents: Vec<u32> = site.parents.iter().map(|p| self.index[p]).collect();
        let own = site.own_weight;
        let m = site.feature.value();

        let mut approved_tips = 0;
        for &p in &parents {
            if self.tips.remove(&p) {
                approved_tips += 1;
            }
            let parent = &self.sites[p as usize];
            if !parent.kind.is_special() {
                self.edges.push(m, parent.feature.value());
            }
        }
        parents.dedup();
        let mut pi = [NO_PARENT; 2];
        for (slot, &p) in pi.iter_mut().zip(&parents) {
            *slot = p;
            self.children[p as usize].push(i);
        }

        // Parents always precede children, so every ancestor at or past the
        // inherited prefix is reachable without stepping below it.
        let floor = parents.iter().map(|&p| self.covered[p as usize]).max().unwrap_or(0);
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let mut stack = parents;
        while let Some(a) = stack.pop() {
            if a < floor || self.stamp[a as usize] == self.generation {
                continue;
            }
            let a = a as usize;
            self.stamp[a] = self.generation;
            self.cw[a] += own;
            stack.extend(self.parent_idx[a].iter().copied().filter(|&p| p != NO_PARENT));
        }
        if own != 0.0 && floor > 0 {
            self.cw_prefix.add_below(floor as usize, own);
        }
        let mut covered = floor;
        while covered < i && self.stamp[covered as usize] == self.generation {
            covered += 1;
        }

        let digest = site.digest;
        self.index.insert(digest, i);
        self.cw.push(site.cumulative_weight);
        self.cw_prefix.push();
        self.covered.push(covered);
        self.parent_idx.push(pi);
        self.children.push(Vec::new());
        self.stamp.push(0);
        self.sites.push(site);
        self.tips.insert(i);
        AppendOutcome::Appended { digest, approved_tips }
    }

    /// One hex-encoded canonical site per line, in insertion order.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for s in &self.sites {
            out.push_str(&hex::encode(s.canonical_bytes()));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a ledger from [`Ledger::export`] output, re-running the
    /// integrity checks on every site.
    pub fn import(text: &str, pow_difficulty: u32, crypto: &CryptoSuite) -> Result<Ledger> {
        let mut ledger = Ledger::new(pow_difficulty);
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bytes = hex::decode(line.trim()).map_err(|e| Error::Decode(format!("line {}: {e}", n + 1)))?;
            let site = Site::from_canonical_bytes(&bytes, crypto.digest.as_ref())
                .map_err(|e| Error::Decode(format!("line {}: {e}", n + 1)))?;
            if let AppendOutcome::Rejected(r) = ledger.append_verified(site, crypto) {
                return Err(Error::MalformedSite(format!("line {}: {r}", n + 1)));
            }
        }
        Ok(ledger)
    }
}

pub(crate) fn interval_of(m: f64, bounds: &[f64]) -> usize {
    bounds.partition_point(|&b| b <= m)
}

#[derive(Debug, Clone)]
struct TipEntry {
    digest: Digest,
    style: f64,
    parent_weight: f64,
}

/// Selectable tips with the per-tip quantities of the RTH-TSA rule, frozen
/// at one point in time.
#[derive(Debug, Clone)]
pub struct TipSnapshot {
    entries: Vec<TipEntry>,
}

impl TipSnapshot {
    pub fn of(ledger: &Ledger) -> Self {
        let entries = ledger
            .tips
            .iter()
            .map(|&i| (i as usize, &ledger.sites[i as usize]))
            .filter(|(_, s)| !s.kind.is_special())
            .map(|(i, s)| TipEntry {
                digest: s.digest,
                style: s.feature.value(),
                parent_weight: ledger.parent_weight_at(i),
            })
            .collect();
        TipSnapshot { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digests(&self) -> impl Iterator<Item = Digest> + '_ {
        self.entries.iter().map(|e| e.digest)
    }

    /// Selection probability of every tip, in [`TipSnapshot::digests`] order.
    pub fn probabilities(&self, m_x: f64, params: RthParams) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyTipSet);
        }
        let logits: Vec<f64> = self
            .entries
            .iter()
            .map(|e| -params.alpha * e.parent_weight - params.beta * (m_x - e.style).powi(2))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|p| *p /= total);
        Ok(w)
    }

    /// Two tips drawn without replacement; the second draw is renormalized
    /// over the remaining tips. A single tip is returned twice.
    pub fn select<R: Rng + ?Sized>(&self, m_x: f64, params: RthParams, rng: &mut R) -> Result<TipSelection> {
        let p = self.probabilities(m_x, params)?;
        let first = draw(&p, None, rng);
        let second = if p.len() == 1 { first } else { draw(&p, Some(first), rng) };
        Ok(TipSelection { first: self.entries[first].digest, second: self.entries[second].digest })
    }
}

fn draw<R: Rng + ?Sized>(p: &[f64], exclude: Option<usize>, rng: &mut R) -> usize {
    let total: f64 = p.iter().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in p.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = i;
        if u < *w {
            return i;
        }
        u -= w;
    }
    last
}

/// Probability that a new site with style `m_x` picks tip `y` first.
pub fn rth_tsa_probability(ledger: &Ledger, m_x: f64, y: &Digest, params: RthParams) -> Result<f64> {
    let snap = TipSnapshot::of(ledger);
    let p = snap.probabilities(m_x, params)?;
    let found = snap.digests().zip(p).find(|(d, _)| d == y).map(|(_, p)| p);
    found.ok_or(Error::UnknownSite(*y))
}

pub fn select_tips_rth<R: Rng + ?Sized>(
    ledger: &Ledger,
    m_x: f64,
    params: RthParams,
    rng: &mut R,
) -> Result<TipSelection> {
    TipSnapshot::of(ledger).select(m_x, params, rng)
}

/// Cumulative-weight-biased random walk baseline. Each of the two walks
/// starts `depth` sites back from the newest non-special site (or at the
/// first site) and steps to an approver `y` of `x` with probability
/// proportional to `exp(-alpha (H_x - H_y))` until it reaches a tip.
pub fn select_tips_mcmc<R: Rng + ?Sized>(ledger: &Ledger, depth: usize, alpha: f64, rng: &mut R) -> Result<TipSelection> {
    if ledger.is_empty() {
        return Err(Error::EmptyTipSet);
    }
    let ordinary: Vec<usize> = (0..ledger.len()).filter(|&i| !ledger.sites[i].kind.is_special()).collect();
    let start = ordinary[ordinary.len().saturating_sub(depth + 1)];
    let first = walk(ledger, start, alpha, rng);
    let second = walk(ledger, start, alpha, rng);
    Ok(TipSelection { first: ledger.sites[first].digest, second: ledger.sites[second].digest })
}

fn walk<R: Rng + ?Sized>(ledger: &Ledger, start: usize, alpha: f64, rng: &mut R) -> usize {
    let mut x = start;
    let mut weights = Vec::new();
    loop {
        let children = &ledger.children[x];
        if children.is_empty() {
            return x;
        }
        let hx = ledger.cw_at(x);
        weights.clear();
        weights.extend(children.iter().map(|&c| -alpha * (hx - ledger.cw_at(c as usize))));
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        weights.iter_mut().for_each(|w| *w = (*w - max).exp());
        x = children[draw(&weights, None, rng)] as usize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{IdentityRef, KeyedDigestScheme, SigningKey};
    use crate::model::{ModelParams, StyleIndicator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    struct Fixture {
        crypto: CryptoSuite,
        key: SigningKey,
    }

    impl Fixture {
        fn new() -> Self {
            let key = SigningKey::derive(0, "icv", 0);
            let mut reg = KeyedDigestScheme::new();
            reg.register(&key);
            Fixture { crypto: CryptoSuite::with_registry(reg), key }
        }

        fn genesis(&self, ledger: &mut Ledger, m: f64) -> Digest {
            let s = Site::genesis(ModelParams::zeros(1), StyleIndicator::new(m).unwrap(), ledger.len() as u64)
                .issue(&self.key, 0, &self.crypto);
            match ledger.append_verified(s, &self.crypto) {
                AppendOutcome::Appended { digest, .. } => digest,
                other => panic!("{other:?}"),
            }
        }

        fn child(&self, ledger: &mut Ledger, m: f64, sel: TipSelection) -> Digest {
            let s = Site::ordinary(ModelParams::zeros(1), StyleIndicator::new(m).unwrap(), 0, sel.parents())
                .issue(&self.key, ledger.pow_difficulty(), &self.crypto);
            let testset = zero_testset();
            match ledger.verify_and_append(s, &sel, &testset, 0.1, &self.crypto) {
                AppendOutcome::Appended { digest, .. } => digest,
                other => panic!("{other:?}"),
            }
        }
    }

    fn zero_testset() -> Dataset {
        let mut d = Dataset::new(1);
        d.push(&[1.0], StyleIndicator::new(0.5).unwrap(), 0.0).unwrap();
        d
    }

    fn random_ledger(fx: &Fixture, n: usize, seed: u64) -> Ledger {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Ledger::new(0);
        fx.genesis(&mut l, 0.5);
        for _ in 0..n {
            let m = rng.random::<f64>();
            let sel = select_tips_rth(&l, m, RthParams { alpha: 0.0, beta: 0.0 }, &mut rng).unwrap();
            fx.child(&mut l, m, sel);
        }
        l
    }

    fn brute_force_cw(l: &Ledger, d: &Digest) -> f64 {
        // own weight plus every site from which `d` is reachable via parent links
        let target = l.index[d] as usize;
        let mut total = l.sites[target].own_weight;
        for (i, s) in l.sites.iter().enumerate() {
            if i == target {
                continue;
            }
            let mut seen = HashSet::new();
            let mut stack: Vec<Digest> = s.parents.clone();
            let mut reaches = false;
            while let Some(p) = stack.pop() {
                if p == *d {
                    reaches = true;
                    break;
                }
                if seen.insert(p) {
                    stack.extend(l.get(&p).unwrap().parents.iter().copied());
                }
            }
            if reaches {
                total += s.own_weight;
            }
        }
        total
    }

    fn recomputed_tips(l: &Ledger) -> BTreeSet<Digest> {
        let approved: HashSet<Digest> = l.sites.iter().flat_map(|s| s.parents.iter().copied()).collect();
        l.sites.iter().map(|s| s.digest).filter(|d| !approved.contains(d)).collect()
    }

    #[test]
    fn uniform_when_weights_vanish() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        for m in [0.1, 0.2, 0.3, 0.4] {
            fx.genesis(&mut l, m);
        }
        let p = TipSnapshot::of(&l).probabilities(0.7, RthParams { alpha: 0.0, beta: 0.0 }).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn two_tip_style_example() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let y = fx.genesis(&mut l, 0.5);
        fx.genesis(&mut l, 0.1);
        let p = rth_tsa_probability(&l, 0.5, &y, RthParams { alpha: 0.0, beta: 1.0 }).unwrap();
        let expected = 1.0 / (1.0 + (-0.16f64).exp());
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.5399).abs() < 5e-5);
    }

    #[test]
    fn large_beta_concentrates_on_nearest_style() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        for m in [0.1, 0.35, 0.6, 0.9] {
            fx.genesis(&mut l, m);
        }
        let p = TipSnapshot::of(&l).probabilities(0.58, RthParams { alpha: 0.0, beta: 1e4 }).unwrap();
        let argmax = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 2);
        assert!(p[2] > 0.999);
    }

    #[test]
    fn empty_tip_set_is_an_error() {
        let l = Ledger::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            select_tips_rth(&l, 0.5, RthParams { alpha: 0.0, beta: 0.0 }, &mut rng),
            Err(Error::EmptyTipSet)
        ));
    }

    #[test]
    fn single_tip_is_selected_twice() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let g = fx.genesis(&mut l, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sel = select_tips_rth(&l, 0.2, RthParams { alpha: 1.0, beta: 1.0 }, &mut rng).unwrap();
        assert_eq!(sel, TipSelection { first: g, second: g });
        let child = fx.child(&mut l, 0.2, sel);
        assert_eq!(l.cumulative_weight(&g), Some(2.0));
        assert!(l.is_tip(&child) && !l.is_tip(&g));
    }

    #[test]
    fn selection_is_reproducible() {
        let fx = Fixture::new();
        let l = random_ledger(&fx, 40, 3);
        let params = RthParams { alpha: 0.2, beta: 3.0 };
        let a = select_tips_rth(&l, 0.4, params, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = select_tips_rth(&l, 0.4, params, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_draw_frequencies_match_probabilities() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        for m in [0.05, 0.3, 0.5, 0.7, 0.95] {
            fx.genesis(&mut l, m);
        }
        let snap = TipSnapshot::of(&l);
        let params = RthParams { alpha: 0.0, beta: 4.0 };
        let p = snap.probabilities(0.6, params).unwrap();
        let digests: Vec<Digest> = snap.digests().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut counts = [0f64; 5];
        for _ in 0..n {
            let sel = snap.select(0.6, params, &mut rng).unwrap();
            counts[digests.iter().position(|d| *d == sel.first).unwrap()] += 1.0;
            assert_ne!(sel.first, sel.second);
        }
        let chi2: f64 = counts.iter().zip(&p).map(|(c, p)| (c - n as f64 * p).powi(2) / (n as f64 * p)).sum();
        let critical = ChiSquared::new(4.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn second_draw_is_renormalized() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        for m in [0.1, 0.5, 0.9] {
            fx.genesis(&mut l, m);
        }
        let snap = TipSnapshot::of(&l);
        let params = RthParams { alpha: 0.0, beta: 2.0 };
        let p = snap.probabilities(0.5, params).unwrap();
        let digests: Vec<Digest> = snap.digests().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let mut pair_01 = 0;
        for _ in 0..n {
            let s = snap.select(0.5, params, &mut rng).unwrap();
            if s.first == digests[0] && s.second == digests[1] {
                pair_01 += 1;
            }
        }
        let expected = p[0] * p[1] / (1.0 - p[0]);
        let freq = pair_01 as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((freq - expected).abs() < 4.0 * se, "{freq} vs {expected}");
    }

    #[test]
    fn heavy_parents_are_least_likely() {
        // tips a, b, c share a style; c sits on the heaviest parents
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let g1 = fx.genesis(&mut l, 0.5);
        let g2 = fx.genesis(&mut l, 0.5);
        let x = fx.child(&mut l, 0.5, TipSelection { first: g1, second: g2 });
        let y = fx.child(&mut l, 0.5, TipSelection { first: x, second: x });
        let c = fx.child(&mut l, 0.5, TipSelection { first: y, second: g1 });
        let a = fx.genesis(&mut l, 0.5);
        let b = fx.child(&mut l, 0.5, TipSelection { first: a, second: a });
        let snap = TipSnapshot::of(&l);
        let p = snap.probabilities(0.5, RthParams { alpha: 0.5, beta: 1.0 }).unwrap();
        let of = |d: Digest| p[snap.digests().position(|e| e == d).unwrap()];
        assert!(of(c) < of(b));
        let heaviest = snap
            .digests()
            .max_by(|u, v| l.parent_weight(u).unwrap().total_cmp(&l.parent_weight(v).unwrap()))
            .unwrap();
        assert_eq!(heaviest, c);
        assert!(snap.digests().all(|d| of(c) <= of(d)));
    }

    #[test]
    fn tampered_sites_are_rejected_with_distinct_codes() {
        let fx = Fixture::new();
        let mut l = Ledger::new(8);
        let g = Site::genesis(ModelParams::zeros(1), StyleIndicator::new(0.5).unwrap(), 0).issue(&fx.key, 8, &fx.crypto);
        let gd = g.digest;
        assert!(l.append_verified(g, &fx.crypto).is_appended());
        let sel = TipSelection { first: gd, second: gd };
        let good = Site::ordinary(ModelParams::zeros(1), StyleIndicator::new(0.4).unwrap(), 0, sel.parents())
            .issue(&fx.key, 8, &fx.crypto);

        let mut bad_sig = good.clone();
        bad_sig.signature[0] ^= 1;
        bad_sig.digest = bad_sig.compute_digest(fx.crypto.digest.as_ref());
        let mut bad_pow = good.clone();
        while site::pow_verify(&bad_pow, 8, fx.crypto.digest.as_ref()) {
            bad_pow.pow_nonce += 1;
        }
        bad_pow.signature = site::sign(&bad_pow, &fx.key, fx.crypto.signatures.as_ref());
        bad_pow.digest = bad_pow.compute_digest(fx.crypto.digest.as_ref());
        let mut bad_digest = good.clone();
        bad_digest.digest.0[0] ^= 1;

        let t = zero_testset();
        let codes: Vec<&str> = [bad_sig, bad_pow, bad_digest]
            .into_iter()
            .map(|s| match l.verify_and_append(s, &sel, &t, 0.1, &fx.crypto) {
                AppendOutcome::Rejected(r) => r.code(),
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(codes, ["invalid-signature", "invalid-pow", "digest-mismatch"]);
        assert_eq!(l.len(), 1);
        assert!(l.verify_and_append(good, &sel, &t, 0.1, &fx.crypto).is_appended());
    }

    #[test]
    fn corrupted_parent_is_rejected() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let mut testset = Dataset::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x: f64 = rng.random_range(-2.0..2.0);
            testset.push(&[x], StyleIndicator::new(0.5).unwrap(), 1.5 * x + 0.5 * 0.5 - 0.3).unwrap();
        }
        let trained = ModelParams::new(vec![1.5, 0.5, -0.3]).unwrap();
        let flipped = ModelParams::new(trained.as_slice().iter().map(|v| -v).collect()).unwrap();
        let mk = |k: ModelParams| Site::genesis(k, StyleIndicator::new(0.5).unwrap(), 0).issue(&fx.key, 0, &fx.crypto);
        let good = mk(trained);
        let bad = mk(flipped.clone());
        let (gd, bd) = (good.digest, bad.digest);
        l.append_verified(good, &fx.crypto);
        l.append_verified(bad, &fx.crypto);
        assert!(test_gap(&flipped, &testset).unwrap().value() > 0.1);

        let sel = TipSelection { first: gd, second: bd };
        let s = Site::ordinary(ModelParams::zeros(1), StyleIndicator::new(0.5).unwrap(), 0, sel.parents())
            .issue(&fx.key, 0, &fx.crypto);
        let before = l.export();
        match l.verify_and_append(s, &sel, &testset, 0.1, &fx.crypto) {
            AppendOutcome::Rejected(Rejection::InvalidParent { parent, gap }) => {
                assert_eq!(parent, bd);
                assert!(gap > 0.1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(l.export(), before);
        assert_eq!(l.tip_count(), 2);
    }

    #[test]
    fn append_changes_tip_count_by_one_minus_approved() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let a = fx.genesis(&mut l, 0.5);
        let b = fx.genesis(&mut l, 0.5);
        let c = fx.genesis(&mut l, 0.5);
        let x = fx.child(&mut l, 0.5, TipSelection { first: a, second: b });
        assert_eq!(l.tip_count(), 2);
        let before = l.tip_count();
        // x is a tip, a is not
        let sel = TipSelection { first: x, second: a };
        let s = Site::ordinary(ModelParams::zeros(1), StyleIndicator::new(0.5).unwrap(), 0, sel.parents())
            .issue(&fx.key, 0, &fx.crypto);
        let out = l.verify_and_append(s, &sel, &zero_testset(), 0.1, &fx.crypto);
        let AppendOutcome::Appended { approved_tips, .. } = out else { panic!() };
        assert_eq!(approved_tips, 1);
        assert_eq!(l.tip_count(), before + 1 - approved_tips);
        assert!(l.is_tip(&c));
    }

    #[test]
    fn genesis_weight_counts_every_descendant() {
        let fx = Fixture::new();
        let l = random_ledger(&fx, 120, 8);
        let g = l.sites()[0].digest;
        assert_eq!(l.cumulative_weight(&g), Some(l.len() as f64));
    }

    #[test]
    fn cumulative_weights_match_brute_force() {
        let fx = Fixture::new();
        for seed in 0..3 {
            let l = random_ledger(&fx, 200, seed);
            for s in l.sites() {
                assert_eq!(l.cumulative_weight(&s.digest).unwrap(), brute_force_cw(&l, &s.digest));
                for p in &s.parents {
                    assert!(l.index[p] < l.index[&s.digest]);
                }
            }
        }
    }

    #[test]
    fn mcmc_on_two_site_chain_returns_the_tip() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let g = fx.genesis(&mut l, 0.5);
        let t = fx.child(&mut l, 0.5, TipSelection { first: g, second: g });
        let sel = select_tips_mcmc(&l, 10, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(sel, TipSelection { first: t, second: t });
    }

    #[test]
    fn mcmc_is_deterministic_and_returns_tips() {
        let fx = Fixture::new();
        let l = random_ledger(&fx, 200, 4);
        let a = select_tips_mcmc(&l, 50, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = select_tips_mcmc(&l, 50, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let tips = recomputed_tips(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for depth in [0, 5, 50, 500] {
            for _ in 0..50 {
                let s = select_tips_mcmc(&l, depth, 0.3, &mut rng).unwrap();
                assert!(tips.contains(&s.first) && tips.contains(&s.second));
            }
        }
    }

    #[test]
    fn shared_style_gives_zero_assortativity() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        let g = fx.genesis(&mut l, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fx.child(&mut l, 0.3, TipSelection { first: g, second: g });
        for _ in 0..20 {
            let sel = select_tips_rth(&l, 0.3, RthParams { alpha: 0.0, beta: 1.0 }, &mut rng).unwrap();
            fx.child(&mut l, 0.3, sel);
        }
        assert_eq!(l.style_assortativity(), 0.0);
    }

    #[test]
    fn assortativity_matches_direct_pearson() {
        let fx = Fixture::new();
        let l = random_ledger(&fx, 150, 12);
        let lr = &l;
        let pairs: Vec<(f64, f64)> = l
            .sites()
            .iter()
            .flat_map(|s| s.parents.iter().map(move |p| (s.feature.value(), lr.get(p).unwrap().feature.value())))
            .collect();
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let vx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let vy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
        assert!((l.style_assortativity() - cov / (vx * vy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn export_import_round_trip() {
        let fx = Fixture::new();
        let l = random_ledger(&fx, 60, 21);
        let text = l.export();
        let back = Ledger::import(&text, 0, &fx.crypto).unwrap();
        assert_eq!(back.export(), text);
        assert_eq!(back.tip_count(), l.tip_count());
        for s in l.sites() {
            assert_eq!(back.cumulative_weight(&s.digest), l.cumulative_weight(&s.digest));
        }
        let corrupted = text.replacen('a', "b", 1);
        assert!(Ledger::import(&corrupted, 0, &fx.crypto).is_err());
    }

    #[test]
    fn special_sites_are_not_selectable() {
        let fx = Fixture::new();
        let mut l = Ledger::new(0);
        fx.genesis(&mut l, 0.5);
        let stone = Site::identity_stone(IdentityRef([1; 32]), 0).issue(&fx.key, 0, &fx.crypto);
        assert!(l.append_verified(stone, &fx.crypto).is_appended());
        assert_eq!(l.tips().count(), 2);
        assert_eq!(l.tip_count(), 1);
        assert_eq!(TipSnapshot::of(&l).len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn incremental_tips_equal_recomputed(seed in any::<u64>(), n in 1usize..80) {
            let fx = Fixture::new();
            let l = random_ledger(&fx, n, seed);
            let tips: BTreeSet<Digest> = l.tips().map(|s| s.digest).collect();
            prop_assert_eq!(tips, recomputed_tips(&l));
        }

        #[test]
        fn probabilities_sum_to_one_and_are_shift_invariant(
            styles in prop::collection::vec(0.0f64..1.0, 1..12),
            weights in prop::collection::vec(0.0f64..50.0, 12),
            shift in -100.0f64..100.0,
            m_x in 0.0f64..1.0,
            alpha in 0.0f64..2.0,
            beta in 0.0f64..20.0,
        ) {
            let entries: Vec<TipEntry> = styles
                .iter()
                .zip(&weights)
                .map(|(&s, &w)| TipEntry { digest: Digest::ZERO, style: s, parent_weight: w })
                .collect();
            let shifted = TipSnapshot {
                entries: entries.iter().cloned().map(|mut e| { e.parent_weight += shift; e }).collect(),
            };
            let base = TipSnapshot { entries };
            let params = RthParams { alpha, beta };
            let p = base.probabilities(m_x, params).unwrap();
            let q = shifted.probabilities(m_x, params).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
