//! Domain-separated hashing primitives for the per-batch wild-card trees.
//!
//! Every hash preimage in a batch tree is constructed here and nowhere else.
//! Three domains are used, distinguished by the first preimage byte:
//!
//! * `0x00` — leaf hash, additionally bound to the batch constant
//! * `0x01` — interior node hash
//! * `0x02` — empty-tree hash, additionally bound to the batch constant
//!
//! The batch constant makes leaf and empty preimages unique per tree, so an
//! attacker working against many batch trees in parallel gains nothing.

use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

/// The per-batch tree-wide constant (16 bytes), sampled fresh for every
/// batch from a cryptographic RNG and published alongside the root so that
/// verifiers can recompute leaf hashes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchConstant(pub [u8; 16]);

impl BatchConstant {
    pub const LEN: usize = 16;

    /// Sample a fresh constant from a cryptographic RNG.
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        BatchConstant(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 16] = bytes.try_into().ok()?;
        Some(BatchConstant(arr))
    }
}

impl std::fmt::Debug for BatchConstant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::with_capacity(32);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        write!(f, "BatchConstant({s})")
    }
}

/// Leaf hash: `SHA-256(0x00 || c || v)`.
pub fn leaf_hash(c: &BatchConstant, v: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(c.as_bytes());
    h.update(v);
    Digest(h.finalize().into())
}

/// Interior node hash: `SHA-256(0x01 || left || right)`.
pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(left.as_bytes());
    h.update(right.as_bytes());
    Digest(h.finalize().into())
}

/// Empty-tree hash: `SHA-256(0x02 || c)`. Used as the root of a batch with
/// zero leaves, and nowhere else.
pub fn empty_hash(c: &BatchConstant) -> Digest {
    let mut h = Sha256::new();
    h.update([0x02]);
    h.update(c.as_bytes());
    Digest(h.finalize().into())
}

/// Plain SHA-256, used for certificate blob digests and signature input.
pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}
