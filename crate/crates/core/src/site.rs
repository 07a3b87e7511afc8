//! The site: the DAG unit that carries one knowledge item.
//!
//! Canonical encoding: the fields below, in declaration order, each written
//! as a 4-byte big-endian length followed by the field bytes. Reals are
//! 8-byte IEEE-754 big-endian, integers are big-endian. The digest `H` is
//! the digest of that encoding and is not itself encoded.
//!
//! | # | field               | bytes                                             |
//! |---|---------------------|---------------------------------------------------|
//! | 1 | kind                | 1 (0 genesis, 1 ordinary, 2 cross-regional, 3 stone) |
//! | 2 | payload             | tag 0 + reals, or tag 1 + subject + u64 serial + reals |
//! | 3 | scope               | u64 (genesis: index)                              |
//! | 4 | feature (style m)   | f64                                               |
//! | 5 | pow nonce           | u64                                               |
//! | 6 | own weight          | f64                                               |
//! | 7 | cumulative weight   | f64 (value at issuance)                           |
//! | 8 | issuer fingerprint  | 32                                                |
//! | 9 | signature           | opaque                                            |
//! |10 | parents             | 0, 32 or 64 (concatenated digests)                |
//!
//! Proof-of-work and signatures are computed over the *unsigned* encoding,
//! i.e. the same layout with an empty signature field.

use serde::{Deserialize, Serialize};

use crate::crypto::{CryptoSuite, Digest, DigestFn, IdentityRef, SignatureScheme, SigningKey};
use crate::error::{Error, Result};
use crate::model::{ModelParams, StyleIndicator};

pub const DEFAULT_POW_DIFFICULTY: u32 = 8;
pub const MAX_POW_DIFFICULTY: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SiteKind {
    Genesis,
    Ordinary,
    CrossRegional,
    IdentityStone,
}

impl SiteKind {
    fn code(self) -> u8 {
        match self {
            SiteKind::Genesis => 0,
            SiteKind::Ordinary => 1,
            SiteKind::CrossRegional => 2,
            SiteKind::IdentityStone => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => SiteKind::Genesis,
            1 => SiteKind::Ordinary,
            2 => SiteKind::CrossRegional,
            3 => SiteKind::IdentityStone,
            other => return Err(Error::Decode(format!("unknown site kind {other}"))),
        })
    }

    /// Zero-weight sites used by cross-region authentication.
    pub fn is_special(self) -> bool {
        matches!(self, SiteKind::CrossRegional | SiteKind::IdentityStone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Knowledge(ModelParams),
    /// Carried by the special sites: the ICV being authenticated, a
    /// crossing serial that keeps repeated crossings distinct and, for a
    /// cross-regional site, the delivered knowledge if any.
    AuthMarker { subject: IdentityRef, serial: u64, knowledge: Option<ModelParams> },
}

impl Payload {
    pub fn knowledge(&self) -> Option<&ModelParams> {
        match self {
            Payload::Knowledge(k) => Some(k),
            Payload::AuthMarker { knowledge, .. } => knowledge.as_ref(),
        }
    }

    pub fn subject(&self) -> Option<&IdentityRef> {
        match self {
            Payload::AuthMarker { subject, .. } => Some(subject),
            Payload::Knowledge(_) => None,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Payload::Knowledge(k) => {
                out.push(0);
                put_reals(out, k.as_slice());
            }
            Payload::AuthMarker { subject, serial, knowledge } => {
                out.push(1);
                out.extend_from_slice(&subject.0);
                out.extend_from_slice(&serial.to_be_bytes());
                if let Some(k) = knowledge {
                    put_reals(out, k.as_slice());
                }
            }
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let (&tag, rest) = bytes.split_first().ok_or_else(|| Error::Decode("empty payload".into()))?;
        match tag {
            0 => Ok(Payload::Knowledge(ModelParams::new(get_reals(rest)?)?)),
            1 => {
                if rest.len() < 40 {
                    return Err(Error::Decode("truncated auth marker".into()));
                }
                let subject = IdentityRef(rest[..32].try_into().unwrap());
                let serial = u64::from_be_bytes(rest[32..40].try_into().unwrap());
                let reals = get_reals(&rest[40..])?;
                let knowledge = if reals.is_empty() { None } else { Some(ModelParams::new(reals)?) };
                Ok(Payload::AuthMarker { subject, serial, knowledge })
            }
            other => Err(Error::Decode(format!("unknown payload tag {other}"))),
        }
    }
}

fn put_reals(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
}

fn get_reals(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Decode("real array length is not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().unwrap())).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub digest: Digest,
    pub kind: SiteKind,
    pub payload: Payload,
    pub scope: u64,
    pub feature: StyleIndicator,
    pub pow_nonce: u64,
    pub own_weight: f64,
    pub cumulative_weight: f64,
    pub issuer: IdentityRef,
    pub signature: Vec<u8>,
    pub parents: Vec<Digest>,
}

impl Site {
    fn unsealed(kind: SiteKind, payload: Payload, scope: u64, feature: StyleIndicator, parents: Vec<Digest>) -> Site {
        let weight = if kind.is_special() { 0.0 } else { 1.0 };
        Site {
            digest: Digest::ZERO,
            kind,
            payload,
            scope,
            feature,
            pow_nonce: 0,
            own_weight: weight,
            cumulative_weight: weight,
            issuer: IdentityRef::default(),
            signature: Vec::new(),
            parents,
        }
    }

    /// Genesis sites have no impact scope; `index` takes its place so that
    /// genesis sites with equal payloads stay distinct.
    pub fn genesis(knowledge: ModelParams, feature: StyleIndicator, index: u64) -> Site {
        Site::unsealed(SiteKind::Genesis, Payload::Knowledge(knowledge), index, feature, Vec::new())
    }

    pub fn ordinary(knowledge: ModelParams, feature: StyleIndicator, scope: u64, parents: [Digest; 2]) -> Site {
        Site::unsealed(SiteKind::Ordinary, Payload::Knowledge(knowledge), scope, feature, parents.to_vec())
    }

    pub fn cross_regional(subject: IdentityRef, serial: u64, knowledge: Option<ModelParams>, scope: u64) -> Site {
        Site::unsealed(
            SiteKind::CrossRegional,
            Payload::AuthMarker { subject, serial, knowledge },
            scope,
            StyleIndicator::default(),
            Vec::new(),
        )
    }

    pub fn identity_stone(subject: IdentityRef, serial: u64) -> Site {
        Site::unsealed(
            SiteKind::IdentityStone,
            Payload::AuthMarker { subject, serial, knowledge: None },
            0,
            StyleIndicator::default(),
            Vec::new(),
        )
    }

    fn encode(&self, with_signature: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(128 + 8 * self.payload.knowledge().map_or(0, |k| k.dim()));
        let mut field = |bytes: &[u8]| {
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(bytes);
        };
        field(&[self.kind.code()]);
        let mut payload = Vec::new();
        self.payload.encode(&mut payload);
        field(&payload);
        field(&self.scope.to_be_bytes());
        field(&self.feature.value().to_be_bytes());
        field(&self.pow_nonce.to_be_bytes());
        field(&self.own_weight.to_be_bytes());
        field(&self.cumulative_weight.to_be_bytes());
        field(&self.issuer.0);
        field(if with_signature { &self.signature } else { &[] });
        let parents: Vec<u8> = self.parents.iter().flat_map(|p| p.0).collect();
        field(&parents);
        out
    }

    /// Canonical encoding of every field except the digest.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.encode(true)
    }

    /// Canonical encoding with an empty signature field.
    pub fn unsigned_bytes(&self) -> Vec<u8> {
        self.encode(false)
    }

    /// Byte offset of the nonce value inside [`Site::unsigned_bytes`].
    fn nonce_offset(&self) -> usize {
        let payload_len = 1 + match &self.payload {
            Payload::Knowledge(k) => 8 * k.dim(),
            Payload::AuthMarker { knowledge, .. } => 40 + 8 * knowledge.as_ref().map_or(0, |k| k.dim()),
        };
        // kind, payload, scope, feature, then the nonce's own length prefix
        (4 + 1) + (4 + payload_len) + (4 + 8) + (4 + 8) + 4
    }

    /// Parses a canonical encoding and recomputes the digest.
    pub fn from_canonical_bytes(bytes: &[u8], digest: &dyn DigestFn) -> Result<Site> {
        let mut fields = Vec::with_capacity(10);
        let mut rest = bytes;
        while !rest.is_empty() {
            if rest.len() < 4 {
                return Err(Error::Decode("truncated length prefix".into()));
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(Error::Decode("truncated field".into()));
            }
            fields.push(&rest[..len]);
            rest = &rest[len..];
        }
        if fields.len() != 10 {
            return Err(Error::Decode(format!("expected 10 fields, found {}", fields.len())));
        }
        let fixed = |i: usize, n: usize| -> Result<&[u8]> {
            if fields[i].len() == n {
                Ok(fields[i])
            } else {
                Err(Error::Decode(format!("field {} has length {}, expected {n}", i + 1, fields[i].len())))
            }
        };
        let u64_at = |i: usize| -> Result<u64> { Ok(u64::from_be_bytes(fixed(i, 8)?.try_into().unwrap())) };
        let f64_at = |i: usize| -> Result<f64> { Ok(f64::from_be_bytes(fixed(i, 8)?.try_into().unwrap())) };

        let kind = SiteKind::from_code(fixed(0, 1)?[0])?;
        let payload = Payload::decode(fields[1])?;
        let scope = u64_at(2)?;
        let feature = StyleIndicator::new(f64_at(3)?).map_err(|e| Error::Decode(e.to_string()))?;
        let pow_nonce = u64_at(4)?;
        let own_weight = f64_at(5)?;
        let cumulative_weight = f64_at(6)?;
        let issuer = IdentityRef(fixed(7, 32)?.try_into().unwrap());
        let signature = fields[8].to_vec();
        if fields[9].len() % 32 != 0 || fields[9].len() > 64 {
            return Err(Error::Decode("parents field must hold 0, 1 or 2 digests".into()));
        }
        let parents = fields[9].chunks_exact(32).map(|c| Digest(c.try_into().unwrap())).collect();

        let mut site = Site {
            digest: Digest::ZERO,
            kind,
            payload,
            scope,
            feature,
            pow_nonce,
            own_weight,
            cumulative_weight,
            issuer,
            signature,
            parents,
        };
        site.digest = site.compute_digest(digest);
        Ok(site)
    }

    pub fn compute_digest(&self, digest: &dyn DigestFn) -> Digest {
        digest.digest(&self.canonical_bytes())
    }

    pub fn digest_matches(&self, digest: &dyn DigestFn) -> bool {
        self.compute_digest(digest) == self.digest
    }

    /// Structural rules per kind: parent count and issuance weights.
    pub fn check_shape(&self) -> Result<()> {
        let parents_ok = match self.kind {
            SiteKind::Ordinary => self.parents.len() == 2,
            _ => self.parents.is_empty(),
        };
        if !parents_ok {
            return Err(Error::MalformedSite(format!(
                "{:?} site with {} parents",
                self.kind,
                self.parents.len()
            )));
        }
        let expected = if self.kind.is_special() { 0.0 } else { 1.0 };
        if self.own_weight != expected || self.cumulative_weight != expected {
            return Err(Error::MalformedSite(format!("{:?} site with weights {:?}", self.kind, self.weights())));
        }
        match (&self.payload, self.kind) {
            (Payload::Knowledge(_), SiteKind::Genesis | SiteKind::Ordinary) => {}
            (Payload::AuthMarker { .. }, SiteKind::CrossRegional) => {}
            (Payload::AuthMarker { knowledge: None, .. }, SiteKind::IdentityStone) => {}
            _ => return Err(Error::MalformedSite(format!("payload does not fit a {:?} site", self.kind))),
        }
        Ok(())
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.own_weight, self.cumulative_weight)
    }

    /// Solves proof-of-work, signs and seals the site with `key`.
    pub fn issue(mut self, key: &SigningKey, difficulty_bits: u32, crypto: &CryptoSuite) -> Site {
        self.issuer = crypto.signatures.fingerprint(key);
        self.pow_nonce = pow_solve(&self, difficulty_bits, crypto.digest.as_ref());
        self.signature = sign(&self, key, crypto.signatures.as_ref());
        self.digest = self.compute_digest(crypto.digest.as_ref());
        self
    }
}

/// Smallest nonce whose unsigned-encoding digest has `difficulty_bits`
/// leading zero bits.
pub fn pow_solve(partial: &Site, difficulty_bits: u32, digest: &dyn DigestFn) -> u64 {
    assert!(difficulty_bits <= MAX_POW_DIFFICULTY, "difficulty above {MAX_POW_DIFFICULTY} bits");
    let mut bytes = partial.unsigned_bytes();
    let at = partial.nonce_offset();
    for nonce in 0..=u64::MAX {
        bytes[at..at + 8].copy_from_slice(&nonce.to_be_bytes());
        if digest.digest(&bytes).leading_zero_bits() >= difficulty_bits {
            return nonce;
        }
    }
    unreachable!("nonce space exhausted")
}

pub fn pow_verify(site: &Site, difficulty_bits: u32, digest: &dyn DigestFn) -> bool {
    digest.digest(&site.unsigned_bytes()).leading_zero_bits() >= difficulty_bits
}

pub fn sign(site: &Site, key: &SigningKey, scheme: &dyn SignatureScheme) -> Vec<u8> {
    scheme.sign(key, &site.unsigned_bytes())
}

pub fn verify(site: &Site, scheme: &dyn SignatureScheme) -> bool {
    scheme.verify(&site.issuer, &site.unsigned_bytes(), &site.signature)
}
