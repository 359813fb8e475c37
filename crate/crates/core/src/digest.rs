//! SHA-256 helpers and the hash-based pseudo-random function used wherever
//! the protocol needs replayable randomness.
//!
//! Everything that ends up on the ledger or in a commitment is hashed with
//! SHA-256 and rendered as lowercase hex.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(data: &[u8]) -> Self {
        Self::of_parts(&[data])
    }

    /// Digest of the concatenation of `parts`.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(hasher.finalize().as_slice());
        Digest(out)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        // Only canonical lowercase hex round-trips.
        let d = Digest(arr);
        (d.to_hex() == s).then_some(d)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex chars"))
    }
}

/// Lowercase hex SHA-256 of the concatenation of `parts`.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    Digest::of_parts(parts).to_hex()
}

/// Counter-mode PRF: the first eight bytes (big-endian) of
/// `SHA-256(seed || counter_be)`.
pub fn prf_u64(seed: &[u8], counter: u64) -> u64 {
    let d = Digest::of_parts(&[seed, &counter.to_be_bytes()]);
    let mut word = [0u8; 8];
    word.copy_from_slice(&d.as_bytes()[..8]);
    u64::from_be_bytes(word)
}

/// Uniform draw in `[0, 1)` from the PRF, using the top 53 bits.
pub fn prf_unit(seed: &[u8], counter: u64) -> f64 {
    (prf_u64(seed, counter) >> 11) as f64 / (1u64 << 53) as f64
}

/// Seeded Fisher-Yates permutation of `0..len`.
///
/// Swap partner for position `i` (walking down from `len - 1`) is
/// `prf_u64(seed, i) % (i + 1)`. The construction is fixed so that other
/// implementations can reproduce it bit for bit.
pub fn seeded_permutation(seed: &[u8], len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (prf_u64(seed, i as u64) % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}
