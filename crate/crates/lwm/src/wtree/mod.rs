//! The static per-batch wild-card Merkle tree.
//!
//! Leaves are Ω-ordered subject names, each carrying a hash over the
//! certificates issued for that name in the batch. A query resolves to one
//! contiguous leaf range; the proof for it consists of the in-range leaves
//! plus the two leaves just outside the range with their full audit paths.
//! Verifying the proof against a signed [`Snapshot`] shows both that every
//! returned certificate is in the batch and that none were withheld.

mod verify;
pub mod wire;

pub use verify::VerifyError;

use std::collections::HashMap;

use crate::hashcore::{empty_hash, leaf_hash, node_hash, sha256, BatchConstant, Digest};
use crate::omega::{omega_sort, resolve_range, OmegaError, SubjectName, WildcardQuery};

/// One leaf: a subject name plus the hash of its certificate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafValue {
    pub name: SubjectName,
    pub cert_list_hash: Digest,
}

impl LeafValue {
    pub fn new(name: SubjectName, blobs: &[Vec<u8>]) -> Self {
        LeafValue {
            name,
            cert_list_hash: cert_list_hash(blobs),
        }
    }

    /// Injective byte encoding: 2-byte big-endian length of the reversed
    /// name, the reversed name, then the 32-byte certificate list hash.
    pub fn serialized(&self) -> Vec<u8> {
        let rev = self.name.reverse();
        let rev = rev.as_bytes();
        let mut out = Vec::with_capacity(2 + rev.len() + 32);
        out.extend_from_slice(&(rev.len() as u16).to_be_bytes());
        out.extend_from_slice(rev);
        out.extend_from_slice(self.cert_list_hash.as_bytes());
        out
    }

    pub fn hash(&self, c: &BatchConstant) -> Digest {
        leaf_hash(c, &self.serialized())
    }
}

/// Hash over a leaf's certificate blobs: SHA-256 of the concatenation of
/// each blob's SHA-256, sorted bytewise. Order-independent per leaf.
pub fn cert_list_hash(blobs: &[Vec<u8>]) -> Digest {
    let mut hashes: Vec<Digest> = blobs.iter().map(|b| sha256(b)).collect();
    hashes.sort();
    let mut cat = Vec::with_capacity(32 * hashes.len());
    for h in &hashes {
        cat.extend_from_slice(h.as_bytes());
    }
    sha256(&cat)
}

/// Whether certificate payloads, grouped per matched leaf, hash to each
/// leaf's certificate list hash.
pub fn certificates_consistent(matches: &[LeafValue], certificates: &[Vec<Vec<u8>>]) -> bool {
    matches.len() == certificates.len()
        && matches
            .iter()
            .zip(certificates)
            .all(|(leaf, blobs)| cert_list_hash(blobs) == leaf.cert_list_hash)
}

/// The batch commitment: what the log signs inside the "lwm" extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub root: Digest,
    pub constant: BatchConstant,
    pub batch_size: u64,
}

/// An audit path for one leaf: sibling hashes ordered leaf to root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditPath {
    pub leaf_index: u64,
    pub siblings: Vec<Digest>,
}

/// One boundary of a wild-card proof: the leaf just outside the matched
/// range and its audit path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    pub leaf: LeafValue,
    pub path: AuditPath,
}

/// A wild-card (non-)membership proof.
///
/// `left_boundary` is absent iff the matched range starts at leaf 0;
/// `right_boundary` is absent iff it ends at the last leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WildcardProof {
    pub tree_size: u64,
    pub match_lo: u64,
    pub matches: Vec<LeafValue>,
    pub left_boundary: Option<Boundary>,
    pub right_boundary: Option<Boundary>,
}

impl WildcardProof {
    /// Total number of sibling hashes across both audit paths.
    pub fn sibling_count(&self) -> usize {
        self.left_boundary.as_ref().map_or(0, |b| b.path.siblings.len())
            + self.right_boundary.as_ref().map_or(0, |b| b.path.siblings.len())
    }
}

/// A built batch tree with every interior hash cached.
///
/// `levels[0]` holds the leaf hashes; each higher level pairs the one
/// below, promoting an unpaired last node. This yields the same shape as
/// recursively splitting at the largest power of two below the leaf count.
#[derive(Debug, Clone)]
pub struct WildTree {
    constant: BatchConstant,
    leaves: Vec<LeafValue>,
    levels: Vec<Vec<Digest>>,
}

impl WildTree {
    /// Build the batch tree for `entries` (subject name to certificate
    /// blobs). Names are Ω-sorted; an empty batch is a valid tree whose
    /// root is the empty hash.
    pub fn build(
        constant: BatchConstant,
        entries: HashMap<SubjectName, Vec<Vec<u8>>>,
    ) -> Result<Self, OmegaError> {
        let mut by_name: HashMap<SubjectName, Digest> = HashMap::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        for (name, blobs) in entries {
            names.push(name.clone());
            by_name.insert(name, cert_list_hash(&blobs));
        }
        let sorted = omega_sort(names)?;
        let leaves: Vec<LeafValue> = sorted
            .into_iter()
            .map(|name| {
                let cert_list_hash = by_name[&name];
                LeafValue {
                    name,
                    cert_list_hash,
                }
            })
            .collect();
        Ok(Self::from_sorted_leaves(constant, leaves))
    }

    /// Build directly from Ω-sorted leaves. Callers must uphold the order.
    pub(crate) fn from_sorted_leaves(constant: BatchConstant, leaves: Vec<LeafValue>) -> Self {
        let mut levels: Vec<Vec<Digest>> = Vec::new();
        if !leaves.is_empty() {
            let base: Vec<Digest> = leaves.iter().map(|l| l.hash(&constant)).collect();
            levels.push(base);
            while levels.last().unwrap().len() > 1 {
                let below = levels.last().unwrap();
                let mut above = Vec::with_capacity(below.len().div_ceil(2));
                for pair in below.chunks(2) {
                    match pair {
                        [a, b] => above.push(node_hash(a, b)),
                        [a] => above.push(*a),
                        _ => unreachable!(),
                    }
                }
                levels.push(above);
            }
        }
        WildTree {
            constant,
            leaves,
            levels,
        }
    }

    pub fn size(&self) -> u64 {
        self.leaves.len() as u64
    }

    pub fn constant(&self) -> &BatchConstant {
        &self.constant
    }

    pub fn leaves(&self) -> &[LeafValue] {
        &self.leaves
    }

    pub fn root(&self) -> Digest {
        match self.levels.last() {
            Some(top) => top[0],
            None => empty_hash(&self.constant),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            root: self.root(),
            constant: self.constant,
            batch_size: self.size(),
        }
    }

    /// Audit path for the leaf at `index`: every sibling on the way to the
    /// root, skipping levels where the node is promoted unpaired.
    pub fn audit_path(&self, index: u64) -> AuditPath {
        assert!(index < self.size(), "leaf index out of range");
        let mut siblings = Vec::new();
        let mut node = index as usize;
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = node ^ 1;
            if sib < level.len() {
                siblings.push(level[sib]);
            }
            node >>= 1;
        }
        AuditPath {
            leaf_index: index,
            siblings,
        }
    }

    /// Generate the wild-card proof for `query`.
    pub fn prove(&self, query: &WildcardQuery) -> WildcardProof {
        if self.leaves.is_empty() {
            return WildcardProof {
                tree_size: 0,
                match_lo: 0,
                matches: Vec::new(),
                left_boundary: None,
                right_boundary: None,
            };
        }
        let names: Vec<SubjectName> = self.leaves.iter().map(|l| l.name.clone()).collect();
        let (lo, hi) = resolve_range(query, &names);
        let left_boundary = (lo > 0).then(|| Boundary {
            leaf: self.leaves[lo - 1].clone(),
            path: self.audit_path((lo - 1) as u64),
        });
        let right_boundary = (hi < self.leaves.len()).then(|| Boundary {
            leaf: self.leaves[hi].clone(),
            path: self.audit_path(hi as u64),
        });
        WildcardProof {
            tree_size: self.size(),
            match_lo: lo as u64,
            matches: self.leaves[lo..hi].to_vec(),
            left_boundary,
            right_boundary,
        }
    }
}

/// Verify a wild-card proof against a signed snapshot. On success returns
/// the complete list of leaves matching `query` in the committed batch.
pub fn verify(
    snapshot: &Snapshot,
    query: &WildcardQuery,
    proof: &WildcardProof,
) -> Result<Vec<LeafValue>, VerifyError> {
    verify::verify(snapshot, query, proof)
}
