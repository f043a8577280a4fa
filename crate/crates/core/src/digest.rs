//! Collision-resistant identifiers for simulated headers, transactions and
//! trace states.
//!
//! Every identifier in the simulator is a SHA-256 digest over a canonical,
//! length-prefixed serialization. Two objects are treated as identical iff
//! their digests are equal.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// A 32-byte digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// Starts a tagged canonical serialization.
    pub fn builder(tag: &str) -> DigestBuilder {
        let mut b = DigestBuilder {
            hasher: Sha256::new(),
        };
        b.hasher.update(b"union-sim/");
        b = b.bytes(tag.as_bytes());
        b
    }

    /// Short hex prefix used in human-facing output.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; 32] = raw.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

/// Incremental canonical serializer. Every field is length- or
/// width-prefixed so distinct field sequences never collide.
pub struct DigestBuilder {
    hasher: Sha256,
}

impl DigestBuilder {
    pub fn bytes(mut self, data: &[u8]) -> Self {
        self.hasher.update((data.len() as u64).to_le_bytes());
        self.hasher.update(data);
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.hasher.update([8u8]);
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn digest(mut self, d: &Digest) -> Self {
        self.hasher.update([32u8]);
        self.hasher.update(d.0);
        self
    }

    pub fn opt_digest(self, d: Option<&Digest>) -> Self {
        match d {
            Some(d) => self.u64(1).digest(d),
            None => self.u64(0),
        }
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> Digest {
        Digest(self.hasher.finalize().into())
    }
}
