//! The subject-side verifier.
//!
//! A subject watches one query against one log. Every notification passes
//! six checks: STH signature, extension well-formedness, gap-free index,
//! timestamp freshness, wild-card proof verification against the signed
//! snapshot, and certificate payloads hashing to the matched leaves. A
//! failed check rejects the notification without advancing state and
//! appends one self-contained evidence record; re-delivery of the already
//! accepted head is ignored without evidence.

use std::path::Path;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{self, Artifacts, Evidence, EvidenceKind};
use crate::notifier::Notification;
use crate::omega::{SubjectName, WildcardQuery};
use crate::wtree::wire::{b64_decode, b64_encode};

/// Default freshness window: an MMD-scale 25 hours.
pub const DEFAULT_FRESHNESS_WINDOW_MS: u64 = 25 * 60 * 60 * 1000;
/// Default tolerated clock skew: 10 minutes.
pub const DEFAULT_SKEW_MS: u64 = 10 * 60 * 1000;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SubjectConfig {
    pub freshness_window_ms: u64,
    pub skew_ms: u64,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        SubjectConfig {
            freshness_window_ms: DEFAULT_FRESHNESS_WINDOW_MS,
            skew_ms: DEFAULT_SKEW_MS,
        }
    }
}

/// Why a notification was rejected. One matching evidence record has been
/// appended to the journal.
#[derive(Debug, Error, Clone)]
#[error("notification rejected ({kind}): {reason}")]
pub struct Rejection {
    pub kind: EvidenceKind,
    pub reason: String,
}

/// Outcome of verifying a notification.
#[derive(Debug, Clone)]
pub enum Verdict {
    /// All checks passed; state advanced. Holds the verified matches with
    /// their certificate blobs (possibly none).
    Accepted(Vec<(SubjectName, Vec<Vec<u8>>)>),
    /// Byte-identical re-delivery of the already accepted head; ignored.
    Duplicate,
}

#[derive(Debug, Error)]
pub enum SubjectError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed state file: {0}")]
    Malformed(String),
}

/// Per-(log, query) monitoring state.
pub struct SubjectState {
    log_public_key: VerifyingKey,
    query: WildcardQuery,
    expected_next_index: u64,
    last_timestamp: u64,
    config: SubjectConfig,
    last_accepted_sth: Option<Vec<u8>>,
    evidence_journal: Vec<Evidence>,
}

impl SubjectState {
    /// Fresh state expecting the log's first head (index 0).
    pub fn new(log_public_key: VerifyingKey, query: WildcardQuery, config: SubjectConfig) -> Self {
        SubjectState {
            log_public_key,
            query,
            expected_next_index: 0,
            last_timestamp: 0,
            config,
            last_accepted_sth: None,
            evidence_journal: Vec::new(),
        }
    }

    /// State bootstrapped from a trusted head obtained out of band; the
    /// next expected index follows it.
    pub fn with_bootstrap(
        log_public_key: VerifyingKey,
        query: WildcardQuery,
        config: SubjectConfig,
        trusted: &crate::logsim::SignedTreeHead,
    ) -> Result<Self, SubjectError> {
        if !trusted.verify_signature(&log_public_key) {
            return Err(SubjectError::Malformed(
                "bootstrap sth signature invalid".into(),
            ));
        }
        let index = trusted
            .index()
            .ok_or_else(|| SubjectError::Malformed("bootstrap sth lacks index".into()))?;
        Ok(SubjectState {
            log_public_key,
            query,
            expected_next_index: index + 1,
            last_timestamp: trusted.timestamp,
            config,
            last_accepted_sth: Some(trusted.signed_bytes()),
            evidence_journal: Vec::new(),
        })
    }

    pub fn query(&self) -> &WildcardQuery {
        &self.query
    }

    pub fn expected_next_index(&self) -> u64 {
        self.expected_next_index
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence_journal
    }

    fn reject(&mut self, now: u64, kind: EvidenceKind, reason: String, artifacts: Artifacts) -> Rejection {
        self.evidence_journal.push(Evidence {
            kind,
            detected_at_ms: now,
            detail: reason.clone(),
            artifacts,
        });
        Rejection { kind, reason }
    }

    /// Run all checks against a notification observed at `now`.
    pub fn verify_notification(
        &mut self,
        now: u64,
        n: &Notification,
    ) -> Result<Verdict, Rejection> {
        let sth_bytes = n.sth.signed_bytes();
        let sth_b64 = b64_encode(&sth_bytes);

        // (1) Signature.
        if !n.sth.verify_signature(&self.log_public_key) {
            return Err(self.reject(
                now,
                EvidenceKind::BadSignature,
                "sth signature invalid".into(),
                Artifacts::BadSignature { sth_b64 },
            ));
        }

        // (2) Extension well-formedness.
        let snapshot = match (
            n.sth.extensions_well_formed(),
            n.sth.index(),
            n.sth.snapshot(),
        ) {
            (true, Some(_), Some(s)) => s,
            _ => {
                return Err(self.reject(
                    now,
                    EvidenceKind::SnapshotMismatch,
                    "malformed extension list".into(),
                    Artifacts::SnapshotMismatch {
                        sth_b64,
                        batch_b64: Vec::new(),
                        reason: "malformed extension list".into(),
                    },
                ))
            }
        };
        let index = n.sth.index().expect("checked above");

        // (3) Index continuity.
        if index != self.expected_next_index {
            let prev_b64 = self.last_accepted_sth.as_deref().map(b64_encode);
            if index > self.expected_next_index {
                return Err(self.reject(
                    now,
                    EvidenceKind::IndexGap,
                    format!("index {index}, expected {}", self.expected_next_index),
                    Artifacts::IndexAnomaly {
                        expected_index: self.expected_next_index,
                        prev_sth_b64: prev_b64,
                        sth_b64,
                    },
                ));
            }
            if index + 1 == self.expected_next_index {
                match &self.last_accepted_sth {
                    Some(prev) if *prev == sth_bytes => return Ok(Verdict::Duplicate),
                    Some(prev) => {
                        let prev_b64 = b64_encode(prev);
                        return Err(self.reject(
                            now,
                            EvidenceKind::InconsistentSths,
                            format!("two different heads for index {index}"),
                            Artifacts::InconsistentSths {
                                first_b64: prev_b64,
                                second_b64: sth_b64,
                                consistency_proof_b64: None,
                                reason: "same index, different content".into(),
                            },
                        ));
                    }
                    None => {}
                }
            }
            return Err(self.reject(
                now,
                EvidenceKind::IndexReplay,
                format!("index {index}, expected {}", self.expected_next_index),
                Artifacts::IndexAnomaly {
                    expected_index: self.expected_next_index,
                    prev_sth_b64: prev_b64,
                    sth_b64,
                },
            ));
        }

        // (4) Freshness.
        let ts = n.sth.timestamp;
        let stale = ts < self.last_timestamp
            || ts > now.saturating_add(self.config.skew_ms)
            || now.saturating_sub(ts) > self.config.freshness_window_ms;
        if stale {
            let artifacts = Artifacts::StaleTimestamp {
                sth_b64,
                observed_at_ms: now,
                last_timestamp_ms: self.last_timestamp,
                freshness_window_ms: self.config.freshness_window_ms,
                skew_ms: self.config.skew_ms,
            };
            return Err(self.reject(
                now,
                EvidenceKind::StaleTimestamp,
                format!("timestamp {ts} outside freshness bounds at {now}"),
                artifacts,
            ));
        }

        // (5) Wild-card proof against the signed snapshot.
        let proof_invalid_artifacts = |error: String| Artifacts::ProofInvalid {
            sth_b64: b64_encode(&sth_bytes),
            proof_b64: b64_encode(&n.proof.to_bytes()),
            query: self.query.as_str().to_string(),
            apex_included: self.query.apex_included(),
            certificates_b64: n
                .certificates
                .iter()
                .map(|blobs| blobs.iter().map(|b| b64_encode(b)).collect())
                .collect(),
            error,
        };
        let matches = match crate::wtree::verify(&snapshot, &self.query, &n.proof) {
            Ok(m) => m,
            Err(e) => {
                let artifacts = proof_invalid_artifacts(e.to_string());
                return Err(self.reject(now, EvidenceKind::ProofInvalid, e.to_string(), artifacts));
            }
        };

        // (6) Certificate payloads hash to the matched leaves.
        if !crate::wtree::certificates_consistent(&matches, &n.certificates) {
            let artifacts = proof_invalid_artifacts("certificate list mismatch".into());
            return Err(self.reject(
                now,
                EvidenceKind::ProofInvalid,
                "certificate list mismatch".into(),
                artifacts,
            ));
        }

        self.expected_next_index = index + 1;
        self.last_timestamp = ts;
        self.last_accepted_sth = Some(sth_bytes);
        let accepted = matches
            .into_iter()
            .zip(&n.certificates)
            .map(|(leaf, blobs)| (leaf.name, blobs.clone()))
            .collect();
        Ok(Verdict::Accepted(accepted))
    }

    /// Serialize the evidence journal (length-prefixed records).
    pub fn export_evidence(&self) -> Vec<u8> {
        evidence::export_journal(&self.evidence_journal)
    }

    pub fn save(&self, path: &Path) -> Result<(), SubjectError> {
        let file = StateFile {
            log_public_key: b64_encode(self.log_public_key.as_bytes()),
            query: self.query.as_str().to_string(),
            apex_included: self.query.apex_included(),
            expected_next_index: self.expected_next_index,
            last_timestamp: self.last_timestamp,
            freshness_window_ms: self.config.freshness_window_ms,
            skew_ms: self.config.skew_ms,
            last_accepted_sth: self.last_accepted_sth.as_deref().map(b64_encode),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&file).unwrap())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SubjectError> {
        let data = std::fs::read(path)?;
        let file: StateFile =
            serde_json::from_slice(&data).map_err(|e| SubjectError::Malformed(e.to_string()))?;
        let bad = |m: &str| SubjectError::Malformed(m.into());
        let key = b64_decode(&file.log_public_key).map_err(|_| bad("public key"))?;
        let key: [u8; 32] = key.as_slice().try_into().map_err(|_| bad("key length"))?;
        let log_public_key =
            VerifyingKey::from_bytes(&key).map_err(|_| bad("invalid public key"))?;
        let query = WildcardQuery::parse_with_apex(&file.query, file.apex_included)
            .map_err(|e| bad(&e.to_string()))?;
        let last_accepted_sth = file
            .last_accepted_sth
            .as_deref()
            .map(b64_decode)
            .transpose()
            .map_err(|_| bad("last accepted sth"))?;
        Ok(SubjectState {
            log_public_key,
            query,
            expected_next_index: file.expected_next_index,
            last_timestamp: file.last_timestamp,
            config: SubjectConfig {
                freshness_window_ms: file.freshness_window_ms,
                skew_ms: file.skew_ms,
            },
            last_accepted_sth,
            evidence_journal: Vec::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    log_public_key: String,
    query: String,
    apex_included: bool,
    expected_next_index: u64,
    last_timestamp: u64,
    freshness_window_ms: u64,
    skew_ms: u64,
    last_accepted_sth: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::{InProcessLog, LogReader};
    use crate::evidence::verify_evidence;
    use crate::logsim::LogState;
    use crate::notifier::{Notifier, NotifierConfig};
    use ed25519_dalek::SigningKey;
    use std::sync::Arc;

    const HOUR: u64 = 3_600_000;

    fn fixture() -> (InProcessLog, Arc<Notifier>, VerifyingKey) {
        let log = InProcessLog::new(
            LogState::ephemeral(SigningKey::from_bytes(&[3u8; 32]), HOUR).with_rng_seed(8),
        );
        let key = log.public_key();
        let notifier =
            Arc::new(Notifier::new(Arc::new(log.clone()), NotifierConfig::default()).unwrap());
        (log, notifier, key)
    }

    fn subject(key: VerifyingKey, query: &str) -> SubjectState {
        SubjectState::new(
            key,
            WildcardQuery::parse(query).unwrap(),
            SubjectConfig::default(),
        )
    }

    #[test]
    fn honest_run_accepts_everything_including_empty_batches() {
        let (log, notifier, key) = fixture();
        let mut subj = subject(key, "*.example.com");
        let mut now = 0;
        log.submit("a.example.com", b"c0".to_vec()).unwrap();
        log.issue_sth(now).unwrap();
        now += HOUR;
        log.issue_sth(now).unwrap(); // empty batch
        now += HOUR;
        log.submit("other.org", b"c1".to_vec()).unwrap();
        log.issue_sth(now).unwrap();
        notifier.poll(now).unwrap();
        let sub = notifier.subscribe(subj.query()).unwrap();
        let batch = notifier.whats_new(&sub.id, None).unwrap();
        assert_eq!(batch.len(), 3);
        let mut accepted_certs = 0;
        for n in &batch {
            match subj.verify_notification(now, n).unwrap() {
                Verdict::Accepted(matches) => {
                    accepted_certs += matches.iter().map(|(_, c)| c.len()).sum::<usize>();
                }
                Verdict::Duplicate => panic!("unexpected duplicate"),
            }
        }
        assert_eq!(accepted_certs, 1);
        assert_eq!(subj.expected_next_index(), 3);
        assert!(subj.evidence().is_empty());
    }

    #[test]
    fn index_gap_rejected_with_verifiable_evidence() {
        let (log, notifier, key) = fixture();
        let mut subj = subject(key, "*.example.com");
        log.issue_sth(0).unwrap();
        log.issue_sth(HOUR).unwrap();
        log.issue_sth(2 * HOUR).unwrap();
        notifier.poll(2 * HOUR).unwrap();
        let sub = notifier.subscribe(subj.query()).unwrap();
        // Deliver head 2 while the subject expects 0.
        let n2 = notifier.notification(&sub.id, 2).unwrap();
        let err = subj.verify_notification(2 * HOUR, &n2).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::IndexGap);
        assert_eq!(subj.expected_next_index(), 0, "state must not advance");
        assert_eq!(subj.evidence().len(), 1);
        assert!(verify_evidence(&subj.evidence()[0], &key));
        // Redelivery in order then succeeds.
        for p in 0..=2 {
            let n = notifier.notification(&sub.id, p).unwrap();
            subj.verify_notification(2 * HOUR, &n).unwrap();
        }
        assert_eq!(subj.expected_next_index(), 3);
    }

    #[test]
    fn duplicate_is_ignored_but_equivocation_is_evidence() {
        let (log, notifier, key) = fixture();
        let mut subj = subject(key, "*.example.com");
        log.issue_sth(0).unwrap();
        notifier.poll(0).unwrap();
        let sub = notifier.subscribe(subj.query()).unwrap();
        let n0 = notifier.notification(&sub.id, 0).unwrap();
        assert!(matches!(
            subj.verify_notification(0, &n0).unwrap(),
            Verdict::Accepted(_)
        ));
        // Byte-identical redelivery: ignored, no evidence.
        assert!(matches!(
            subj.verify_notification(0, &n0).unwrap(),
            Verdict::Duplicate
        ));
        assert!(subj.evidence().is_empty());

        // A different head for the same index: binding evidence.
        let mut other = n0.clone();
        {
            // Re-sign a modified head with the log's key.
            let mut log2 = LogState::ephemeral(SigningKey::from_bytes(&[3u8; 32]), HOUR);
            log2.submit("x.example.com", b"other".to_vec()).unwrap();
            other.sth = log2.issue_sth(0).unwrap();
            other.proof = crate::wtree::WildTree::build(
                other.sth.snapshot().unwrap().constant,
                [(
                    crate::omega::SubjectName::normalize("x.example.com").unwrap(),
                    vec![b"other".to_vec()],
                )]
                .into_iter()
                .collect(),
            )
            .unwrap()
            .prove(subj.query());
            other.certificates = other
                .proof
                .matches
                .iter()
                .map(|_| vec![b"other".to_vec()])
                .collect();
        }
        let err = subj.verify_notification(0, &other).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::InconsistentSths);
        assert!(verify_evidence(&subj.evidence()[0], &key));
    }

    #[test]
    fn stale_and_future_timestamps_rejected() {
        let (log, notifier, key) = fixture();
        let mut subj = subject(key, "*.example.com");
        log.issue_sth(0).unwrap();
        notifier.poll(0).unwrap();
        let sub = notifier.subscribe(subj.query()).unwrap();
        let n = notifier.notification(&sub.id, 0).unwrap();

        // Observed far beyond the freshness window.
        let late = DEFAULT_FRESHNESS_WINDOW_MS + 1;
        let err = subj.verify_notification(late, &n).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::StaleTimestamp);
        assert!(verify_evidence(&subj.evidence()[0], &key));

        // A head timestamped in the future beyond skew. Reuse a fresh
        // subject so index expectations match.
        let log2 = InProcessLog::new(
            LogState::ephemeral(SigningKey::from_bytes(&[3u8; 32]), HOUR).with_rng_seed(8),
        );
        let key2 = log2.public_key();
        let mut subj2 = subject(key2, "*.example.com");
        log2.issue_sth(DEFAULT_SKEW_MS + 1000).unwrap();
        let notifier2 =
            Notifier::new(Arc::new(log2.clone()), NotifierConfig::default()).unwrap();
        notifier2.poll(0).unwrap();
        let sub2 = notifier2.subscribe(subj2.query()).unwrap();
        let n2 = notifier2.notification(&sub2.id, 0).unwrap();
        let err = subj2.verify_notification(0, &n2).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::StaleTimestamp);
    }

    #[test]
    fn proof_and_certificate_mutations_rejected() {
        let (log, notifier, key) = fixture();
        log.submit("a.example.com", b"cert-a".to_vec()).unwrap();
        log.submit("b.example.com", b"cert-b".to_vec()).unwrap();
        log.issue_sth(0).unwrap();
        notifier.poll(0).unwrap();
        let sub = notifier
            .subscribe(&WildcardQuery::parse("*.example.com").unwrap())
            .unwrap();
        let honest = notifier.notification(&sub.id, 0).unwrap();

        // Dropped match.
        let mut subj = subject(key, "*.example.com");
        let mut n = honest.clone();
        n.proof.matches.remove(0);
        n.certificates.remove(0);
        let err = subj.verify_notification(0, &n).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::ProofInvalid);
        assert!(verify_evidence(&subj.evidence()[0], &key));

        // Altered sibling.
        let mut subj = subject(key, "*.example.com");
        let mut n = honest.clone();
        if let Some(b) = &mut n.proof.right_boundary {
            b.path.siblings[0].0[0] ^= 1;
        } else {
            n.proof.matches[0].cert_list_hash.0[0] ^= 1;
        }
        assert_eq!(
            subj.verify_notification(0, &n).unwrap_err().kind,
            EvidenceKind::ProofInvalid
        );

        // Swapped certificate payload.
        let mut subj = subject(key, "*.example.com");
        let mut n = honest.clone();
        n.certificates[0] = vec![b"wrong".to_vec()];
        let err = subj.verify_notification(0, &n).unwrap_err();
        assert_eq!(err.kind, EvidenceKind::ProofInvalid);
        assert!(verify_evidence(&subj.evidence()[0], &key));

        // Forged signature byte.
        let mut subj = subject(key, "*.example.com");
        let mut n = honest.clone();
        let mut sig = n.sth.signature.to_bytes();
        sig[0] ^= 1;
        n.sth.signature = ed25519_dalek::Signature::from_bytes(&sig);
        assert_eq!(
            subj.verify_notification(0, &n).unwrap_err().kind,
            EvidenceKind::BadSignature
        );
    }

    #[test]
    fn bootstrap_sets_expectations() {
        let (log, notifier, key) = fixture();
        log.issue_sth(0).unwrap();
        log.issue_sth(HOUR).unwrap();
        notifier.poll(HOUR).unwrap();
        let trusted = log.sth_at(0).unwrap();
        let mut subj = SubjectState::with_bootstrap(
            key,
            WildcardQuery::parse("*.example.com").unwrap(),
            SubjectConfig::default(),
            &trusted,
        )
        .unwrap();
        assert_eq!(subj.expected_next_index(), 1);
        let sub = notifier.subscribe(subj.query()).unwrap();
        let n1 = notifier.notification(&sub.id, 1).unwrap();
        subj.verify_notification(HOUR, &n1).unwrap();
        assert_eq!(subj.expected_next_index(), 2);
    }

    #[test]
    fn state_save_load_round_trip() {
        let (log, notifier, key) = fixture();
        log.issue_sth(0).unwrap();
        notifier.poll(0).unwrap();
        let mut subj = subject(key, "*.example.com");
        let sub = notifier.subscribe(subj.query()).unwrap();
        let n = notifier.notification(&sub.id, 0).unwrap();
        subj.verify_notification(0, &n).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subject.json");
        subj.save(&path).unwrap();
        let mut restored = SubjectState::load(&path).unwrap();
        assert_eq!(restored.expected_next_index(), 1);
        // Duplicate detection survives the round trip.
        assert!(matches!(
            restored.verify_notification(0, &n).unwrap(),
            Verdict::Duplicate
        ));
    }

    #[test]
    fn evidence_journal_round_trips() {
        let (log, notifier, key) = fixture();
        log.issue_sth(0).unwrap();
        log.issue_sth(HOUR).unwrap();
        notifier.poll(HOUR).unwrap();
        let mut subj = subject(key, "*.example.com");
        let sub = notifier.subscribe(subj.query()).unwrap();
        let n1 = notifier.notification(&sub.id, 1).unwrap();
        let _ = subj.verify_notification(HOUR, &n1).unwrap_err();
        let exported = subj.export_evidence();
        let imported = crate::evidence::import_journal(&exported).unwrap();
        assert_eq!(imported.len(), 1);
        assert!(verify_evidence(&imported[0], &key));
        // Tampering with the embedded artifact invalidates the record.
        let mut tampered = imported[0].clone();
        if let Artifacts::IndexAnomaly { sth_b64, .. } = &mut tampered.artifacts {
            let mut raw = b64_decode(sth_b64).unwrap();
            raw[0] ^= 1;
            *sth_b64 = b64_encode(&raw);
        }
        assert!(!verify_evidence(&tampered, &key));
    }
}
