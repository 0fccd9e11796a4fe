//! Canonical encodings for proofs and snapshots.
//!
//! The binary proof format (all integers big-endian):
//!
//! ```text
//! 0x01 | tree_size u64 | match_lo u64 | match_count u32
//!      | match leaves | flags u8 | boundary leaves
//!      | path lengths u16 (per present boundary) | sibling digests
//! ```
//!
//! where a leaf is `rev_name_len u16 | rev_name | cert_list_hash (32B)` and
//! flags bit 0 / bit 1 signal the left / right boundary. Decoding is
//! strict: unknown versions, stray flag bits, malformed names and trailing
//! bytes are all rejected, so the encoding is canonical.
//!
//! The snapshot encoding (the "lwm" STH extension value):
//!
//! ```text
//! 0x01 | batch constant (16B) | batch_size u64 | root (32B)
//! ```
//!
//! A JSON mirror of the proof with base64 digests backs the HTTP surfaces.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashcore::{BatchConstant, Digest};
use crate::omega::{ReversedName, MAX_NAME_LEN};

use super::{AuditPath, Boundary, LeafValue, Snapshot, WildcardProof};

pub const PROOF_VERSION: u8 = 0x01;
pub const SNAPSHOT_VERSION: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unsupported version byte {0:#04x}")]
    Version(u8),
    #[error("invalid presence flags {0:#04x}")]
    Flags(u8),
    #[error("invalid leaf name: {0}")]
    Name(String),
    #[error("trailing bytes after proof")]
    Trailing,
    #[error("declared count exceeds input size")]
    Oversize,
}

pub(crate) fn b64_encode(data: &[u8]) -> String {
    B64.encode(data)
}

pub(crate) fn b64_decode(s: &str) -> Result<Vec<u8>, DecodeError> {
    B64.decode(s).map_err(|_| DecodeError::Truncated)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest::from_slice(self.bytes(32)?).unwrap())
    }

    fn leaf(&mut self) -> Result<LeafValue, DecodeError> {
        let len = self.u16()? as usize;
        if len == 0 || len > MAX_NAME_LEN {
            return Err(DecodeError::Name(format!("reversed name length {len}")));
        }
        let rev = ReversedName::from_bytes(self.bytes(len)?.to_vec());
        let name = rev
            .to_subject_name()
            .map_err(|e| DecodeError::Name(e.to_string()))?;
        let cert_list_hash = self.digest()?;
        Ok(LeafValue {
            name,
            cert_list_hash,
        })
    }
}

impl WildcardProof {
    /// Encode into the canonical binary form.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 35 * self.matches.len());
        out.push(PROOF_VERSION);
        out.extend_from_slice(&self.tree_size.to_be_bytes());
        out.extend_from_slice(&self.match_lo.to_be_bytes());
        out.extend_from_slice(&(self.matches.len() as u32).to_be_bytes());
        for m in &self.matches {
            out.extend_from_slice(&m.serialized());
        }
        let flags = u8::from(self.left_boundary.is_some())
            | (u8::from(self.right_boundary.is_some()) << 1);
        out.push(flags);
        for b in [&self.left_boundary, &self.right_boundary]
            .into_iter()
            .flatten()
        {
            out.extend_from_slice(&b.leaf.serialized());
        }
        for b in [&self.left_boundary, &self.right_boundary]
            .into_iter()
            .flatten()
        {
            out.extend_from_slice(&(b.path.siblings.len() as u16).to_be_bytes());
        }
        for b in [&self.left_boundary, &self.right_boundary]
            .into_iter()
            .flatten()
        {
            for s in &b.path.siblings {
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    /// Decode the canonical binary form, strictly.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let version = r.u8()?;
        if version != PROOF_VERSION {
            return Err(DecodeError::Version(version));
        }
        let tree_size = r.u64()?;
        let match_lo = r.u64()?;
        let match_count = r.u32()? as usize;
        // Smallest possible leaf is 2 + 1 + 32 bytes.
        if match_count > r.remaining() / 35 {
            return Err(DecodeError::Oversize);
        }
        let mut matches = Vec::with_capacity(match_count);
        for _ in 0..match_count {
            matches.push(r.leaf()?);
        }
        let flags = r.u8()?;
        if flags & !0b11 != 0 {
            return Err(DecodeError::Flags(flags));
        }
        let has_left = flags & 0b01 != 0;
        let has_right = flags & 0b10 != 0;
        let left_leaf = has_left.then(|| r.leaf()).transpose()?;
        let right_leaf = has_right.then(|| r.leaf()).transpose()?;
        let left_len = has_left.then(|| r.u16()).transpose()?.unwrap_or(0) as usize;
        let right_len = has_right.then(|| r.u16()).transpose()?.unwrap_or(0) as usize;
        let mut read_sibs = |n: usize| -> Result<Vec<Digest>, DecodeError> {
            if n > r.remaining() / 32 {
                return Err(DecodeError::Oversize);
            }
            (0..n).map(|_| r.digest()).collect()
        };
        let left_sibs = read_sibs(left_len)?;
        let right_sibs = read_sibs(right_len)?;
        if r.remaining() != 0 {
            return Err(DecodeError::Trailing);
        }
        // Boundary leaf indices are not on the wire; they are implied by
        // match_lo and the match count (and re-checked during verify).
        let left_boundary = left_leaf.map(|leaf| Boundary {
            leaf,
            path: AuditPath {
                leaf_index: match_lo.saturating_sub(1),
                siblings: left_sibs,
            },
        });
        let right_boundary = right_leaf.map(|leaf| Boundary {
            leaf,
            path: AuditPath {
                leaf_index: match_lo.saturating_add(match_count as u64),
                siblings: right_sibs,
            },
        });
        Ok(WildcardProof {
            tree_size,
            match_lo,
            matches,
            left_boundary,
            right_boundary,
        })
    }

    pub fn to_json(&self) -> ProofJson {
        ProofJson::from(self)
    }
}

impl Snapshot {
    /// Encode as the "lwm" extension value (57 bytes).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(57);
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(self.constant.as_bytes());
        out.extend_from_slice(&self.batch_size.to_be_bytes());
        out.extend_from_slice(self.root.as_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let version = r.u8()?;
        if version != SNAPSHOT_VERSION {
            return Err(DecodeError::Version(version));
        }
        let constant = BatchConstant::from_slice(r.bytes(16)?).unwrap();
        let batch_size = r.u64()?;
        let root = r.digest()?;
        if r.remaining() != 0 {
            return Err(DecodeError::Trailing);
        }
        Ok(Snapshot {
            root,
            constant,
            batch_size,
        })
    }
}

/// JSON mirror of a proof, with base64 digests; used on HTTP surfaces.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ProofJson {
    pub tree_size: u64,
    pub match_lo: u64,
    pub matches: Vec<LeafJson>,
    pub left_boundary: Option<BoundaryJson>,
    pub right_boundary: Option<BoundaryJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LeafJson {
    pub name: String,
    pub cert_list_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BoundaryJson {
    pub leaf: LeafJson,
    pub leaf_index: u64,
    pub siblings: Vec<String>,
}

impl From<&LeafValue> for LeafJson {
    fn from(l: &LeafValue) -> Self {
        LeafJson {
            name: l.name.as_str().to_string(),
            cert_list_hash: b64_encode(l.cert_list_hash.as_bytes()),
        }
    }
}

impl From<&Boundary> for BoundaryJson {
    fn from(b: &Boundary) -> Self {
        BoundaryJson {
            leaf: LeafJson::from(&b.leaf),
            leaf_index: b.path.leaf_index,
            siblings: b
                .path
                .siblings
                .iter()
                .map(|s| b64_encode(s.as_bytes()))
                .collect(),
        }
    }
}

impl From<&WildcardProof> for ProofJson {
    fn from(p: &WildcardProof) -> Self {
        ProofJson {
            tree_size: p.tree_size,
            match_lo: p.match_lo,
            matches: p.matches.iter().map(LeafJson::from).collect(),
            left_boundary: p.left_boundary.as_ref().map(BoundaryJson::from),
            right_boundary: p.right_boundary.as_ref().map(BoundaryJson::from),
        }
    }
}

fn leaf_from_json(l: &LeafJson) -> Result<LeafValue, DecodeError> {
    let name = crate::omega::SubjectName::normalize(&l.name)
        .map_err(|e| DecodeError::Name(e.to_string()))?;
    if name.as_str() != l.name {
        return Err(DecodeError::Name("name not in normalized form".into()));
    }
    let hash = b64_decode(&l.cert_list_hash)?;
    let cert_list_hash = Digest::from_slice(&hash).ok_or(DecodeError::Truncated)?;
    Ok(LeafValue {
        name,
        cert_list_hash,
    })
}

fn boundary_from_json(b: &BoundaryJson) -> Result<Boundary, DecodeError> {
    let mut siblings = Vec::with_capacity(b.siblings.len());
    for s in &b.siblings {
        let raw = b64_decode(s)?;
        siblings.push(Digest::from_slice(&raw).ok_or(DecodeError::Truncated)?);
    }
    Ok(Boundary {
        leaf: leaf_from_json(&b.leaf)?,
        path: AuditPath {
            leaf_index: b.leaf_index,
            siblings,
        },
    })
}

impl TryFrom<&ProofJson> for WildcardProof {
    type Error = DecodeError;

    fn try_from(p: &ProofJson) -> Result<Self, DecodeError> {
        Ok(WildcardProof {
            tree_size: p.tree_size,
            match_lo: p.match_lo,
            matches: p
                .matches
                .iter()
                .map(leaf_from_json)
                .collect::<Result<_, _>>()?,
            left_boundary: p
                .left_boundary
                .as_ref()
                .map(boundary_from_json)
                .transpose()?,
            right_boundary: p
                .right_boundary
                .as_ref()
                .map(boundary_from_json)
                .transpose()?,
        })
    }
}
