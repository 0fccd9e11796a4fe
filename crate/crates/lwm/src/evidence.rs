//! Self-contained records of log or notifier misbehavior.
//!
//! Each record embeds the offending artifacts (signed tree heads, proofs,
//! batch entries) so that a third party holding only the record and the
//! log's public key can re-run the failed check and reach the same
//! verdict. Journals are length-prefixed JSON records; binary fields are
//! base64 inside the JSON.

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logsim::{LogEntry, SignedTreeHead};
use crate::omega::{SubjectName, WildcardQuery};
use crate::rfc6962;
use crate::wtree::wire::{b64_decode, b64_encode};
use crate::wtree::{certificates_consistent, verify as wtree_verify, WildTree, WildcardProof};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceKind {
    BadSignature,
    IndexGap,
    IndexReplay,
    StaleTimestamp,
    ProofInvalid,
    SnapshotMismatch,
    InconsistentSths,
}

impl std::fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvidenceKind::BadSignature => "bad-signature",
            EvidenceKind::IndexGap => "index-gap",
            EvidenceKind::IndexReplay => "index-replay",
            EvidenceKind::StaleTimestamp => "stale-timestamp",
            EvidenceKind::ProofInvalid => "proof-invalid",
            EvidenceKind::SnapshotMismatch => "snapshot-mismatch",
            EvidenceKind::InconsistentSths => "inconsistent-sths",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("malformed evidence record: {0}")]
    Malformed(String),
}

/// One detected incident with everything needed to re-check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: EvidenceKind,
    pub detected_at_ms: u64,
    pub detail: String,
    pub artifacts: Artifacts,
}

/// The offending artifacts, keyed by the kind of check that failed.
/// `*_b64` fields hold the binary serializations defined in `logsim` and
/// `wtree::wire`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Artifacts {
    /// An STH whose signature fails under the log key.
    BadSignature { sth_b64: String },
    /// An STH whose index is not the expected successor. `prev_sth_b64`
    /// is the last accepted head when the holder has one.
    IndexAnomaly {
        expected_index: u64,
        prev_sth_b64: Option<String>,
        sth_b64: String,
    },
    /// A correctly signed STH whose timestamp violates the freshness rule
    /// the holder was enforcing.
    StaleTimestamp {
        sth_b64: String,
        observed_at_ms: u64,
        last_timestamp_ms: u64,
        freshness_window_ms: u64,
        skew_ms: u64,
    },
    /// A full notification that fails wild-card verification (or whose
    /// attached certificates do not hash to the matched leaves).
    ProofInvalid {
        sth_b64: String,
        proof_b64: String,
        query: String,
        apex_included: bool,
        certificates_b64: Vec<Vec<String>>,
        error: String,
    },
    /// A signed STH whose "lwm" snapshot cannot be reproduced from the
    /// batch it covers (or whose extension list is malformed).
    SnapshotMismatch {
        sth_b64: String,
        batch_b64: Vec<String>,
        reason: String,
    },
    /// Two signed heads that cannot belong to one honest log: same index
    /// with different content, or a failing main-tree consistency link.
    InconsistentSths {
        first_b64: String,
        second_b64: String,
        consistency_proof_b64: Option<Vec<String>>,
        reason: String,
    },
}

pub(crate) fn sth_b64(sth: &SignedTreeHead) -> String {
    b64_encode(&sth.signed_bytes())
}

pub(crate) fn entries_b64(entries: &[LogEntry]) -> Vec<String> {
    entries.iter().map(|e| b64_encode(&e.serialized())).collect()
}

fn decode_sth(b64: &str) -> Option<SignedTreeHead> {
    SignedTreeHead::from_signed_bytes(&b64_decode(b64).ok()?).ok()
}

/// Re-run the failed check recorded in `ev` under `log_public_key`.
/// Returns true iff the record reproduces the recorded misbehavior.
pub fn verify_evidence(ev: &Evidence, log_public_key: &VerifyingKey) -> bool {
    match (&ev.kind, &ev.artifacts) {
        (EvidenceKind::BadSignature, Artifacts::BadSignature { sth_b64 }) => {
            match decode_sth(sth_b64) {
                Some(sth) => !sth.verify_signature(log_public_key),
                None => true, // undecodable bytes cannot carry a valid signature
            }
        }
        (
            EvidenceKind::IndexGap | EvidenceKind::IndexReplay,
            Artifacts::IndexAnomaly {
                expected_index,
                prev_sth_b64,
                sth_b64,
            },
        ) => {
            let Some(sth) = decode_sth(sth_b64) else {
                return false;
            };
            if !sth.verify_signature(log_public_key) {
                return false;
            }
            let expected = match prev_sth_b64 {
                Some(prev) => {
                    let Some(prev) = decode_sth(prev) else {
                        return false;
                    };
                    if !prev.verify_signature(log_public_key) {
                        return false;
                    }
                    match prev.index() {
                        Some(i) => i + 1,
                        None => return false,
                    }
                }
                None => *expected_index,
            };
            match (ev.kind, sth.index()) {
                (EvidenceKind::IndexGap, Some(idx)) => idx > expected,
                (EvidenceKind::IndexReplay, Some(idx)) => idx < expected,
                _ => false,
            }
        }
        (
            EvidenceKind::StaleTimestamp,
            Artifacts::StaleTimestamp {
                sth_b64,
                observed_at_ms,
                last_timestamp_ms,
                freshness_window_ms,
                skew_ms,
            },
        ) => {
            let Some(sth) = decode_sth(sth_b64) else {
                return false;
            };
            if !sth.verify_signature(log_public_key) {
                return false;
            }
            let ts = sth.timestamp;
            ts < *last_timestamp_ms
                || ts > observed_at_ms.saturating_add(*skew_ms)
                || observed_at_ms.saturating_sub(ts) > *freshness_window_ms
        }
        (
            EvidenceKind::ProofInvalid,
            Artifacts::ProofInvalid {
                sth_b64,
                proof_b64,
                query,
                apex_included,
                certificates_b64,
                ..
            },
        ) => {
            let Some(sth) = decode_sth(sth_b64) else {
                return false;
            };
            if !sth.verify_signature(log_public_key) {
                return false;
            }
            let Some(snapshot) = sth.snapshot() else {
                return true; // malformed snapshot: notification unverifiable
            };
            let Ok(query) = WildcardQuery::parse_with_apex(query, *apex_included) else {
                return false;
            };
            let Ok(raw) = b64_decode(proof_b64) else {
                return true;
            };
            let Ok(proof) = WildcardProof::from_bytes(&raw) else {
                return true;
            };
            match wtree_verify(&snapshot, &query, &proof) {
                Err(_) => true,
                Ok(matches) => {
                    // The proof itself verified; the incident must then be
                    // a certificate list that fails to hash.
                    !certs_match(&matches, certificates_b64)
                }
            }
        }
        (
            EvidenceKind::SnapshotMismatch,
            Artifacts::SnapshotMismatch {
                sth_b64, batch_b64, ..
            },
        ) => {
            let Some(sth) = decode_sth(sth_b64) else {
                return false;
            };
            if !sth.verify_signature(log_public_key) {
                return false;
            }
            if !sth.extensions_well_formed() || sth.index().is_none() {
                return true;
            }
            let Some(snapshot) = sth.snapshot() else {
                return true;
            };
            let mut grouped: std::collections::HashMap<SubjectName, Vec<Vec<u8>>> =
                std::collections::HashMap::new();
            for b in batch_b64 {
                let Ok(raw) = b64_decode(b) else {
                    return false;
                };
                let Ok(entry) = LogEntry::from_bytes(&raw) else {
                    return false;
                };
                grouped.entry(entry.subject).or_default().push(entry.blob);
            }
            match WildTree::build(snapshot.constant, grouped) {
                Ok(tree) => {
                    tree.root() != snapshot.root || tree.size() != snapshot.batch_size
                }
                Err(_) => false,
            }
        }
        (
            EvidenceKind::InconsistentSths,
            Artifacts::InconsistentSths {
                first_b64,
                second_b64,
                consistency_proof_b64,
                ..
            },
        ) => {
            let (Some(a), Some(b)) = (decode_sth(first_b64), decode_sth(second_b64)) else {
                return false;
            };
            if !a.verify_signature(log_public_key) || !b.verify_signature(log_public_key) {
                return false;
            }
            if a.index().is_some() && a.index() == b.index() {
                return a.signed_bytes() != b.signed_bytes();
            }
            match consistency_proof_b64 {
                Some(proof) => {
                    let mut digests = Vec::with_capacity(proof.len());
                    for p in proof {
                        let Ok(raw) = b64_decode(p) else {
                            return false;
                        };
                        let Some(d) = crate::hashcore::Digest::from_slice(&raw) else {
                            return false;
                        };
                        digests.push(d);
                    }
                    !rfc6962::verify_consistency(
                        a.tree_size,
                        b.tree_size,
                        &digests,
                        &a.main_root,
                        &b.main_root,
                    )
                }
                None => false,
            }
        }
        _ => false,
    }
}

/// Whether base64 cert blobs hash to the matched leaves' list hashes.
fn certs_match(matches: &[crate::wtree::LeafValue], certificates_b64: &[Vec<String>]) -> bool {
    let mut decoded = Vec::with_capacity(certificates_b64.len());
    for blobs_b64 in certificates_b64 {
        let mut blobs = Vec::with_capacity(blobs_b64.len());
        for b in blobs_b64 {
            match b64_decode(b) {
                Ok(raw) => blobs.push(raw),
                Err(_) => return false,
            }
        }
        decoded.push(blobs);
    }
    certificates_consistent(matches, &decoded)
}

/// Serialize a journal as length-prefixed JSON records.
pub fn export_journal(records: &[Evidence]) -> Vec<u8> {
    let mut out = Vec::new();
    for ev in records {
        let json = serde_json::to_vec(ev).expect("evidence serializes");
        out.extend_from_slice(&(json.len() as u32).to_be_bytes());
        out.extend_from_slice(&json);
    }
    out
}

pub fn import_journal(mut buf: &[u8]) -> Result<Vec<Evidence>, EvidenceError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        if buf.len() < 4 {
            return Err(EvidenceError::Malformed("truncated length prefix".into()));
        }
        let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        buf = &buf[4..];
        if buf.len() < len {
            return Err(EvidenceError::Malformed("truncated record".into()));
        }
        let ev: Evidence = serde_json::from_slice(&buf[..len])
            .map_err(|e| EvidenceError::Malformed(e.to_string()))?;
        out.push(ev);
        buf = &buf[len..];
    }
    Ok(out)
}
