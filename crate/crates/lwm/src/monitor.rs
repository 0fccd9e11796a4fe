//! The general full-audit function, decoupled from notification.
//!
//! A monitor downloads every batch, rebuilds each wild-card snapshot from
//! the published batch constant, and links consecutive heads through
//! main-tree consistency proofs. It needs no trust and no key material
//! beyond the log's public key; any divergence yields an evidence record.

use serde::{Deserialize, Serialize};

use ed25519_dalek::VerifyingKey;

use crate::api::{ApiError, LogReader};
use crate::evidence::{entries_b64, sth_b64, Artifacts, Evidence, EvidenceKind};
use crate::logsim::{LogEntry, SignedTreeHead};
use crate::notifier::{rebuild, RebuildError};
use crate::rfc6962;

/// The outcome of auditing one head, as emitted on the verdict stream
/// (line-delimited JSON in the CLI).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub position: u64,
    pub index: Option<u64>,
    pub tree_size: u64,
    pub batch_size: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl AuditVerdict {
    fn ok(position: u64, sth: &SignedTreeHead, batch_size: u64) -> Self {
        AuditVerdict {
            position,
            index: sth.index(),
            tree_size: sth.tree_size,
            batch_size,
            ok: true,
            failure: None,
            detail: None,
        }
    }

    fn failed(
        position: u64,
        sth: &SignedTreeHead,
        batch_size: u64,
        kind: EvidenceKind,
        detail: String,
    ) -> Self {
        AuditVerdict {
            position,
            index: sth.index(),
            tree_size: sth.tree_size,
            batch_size,
            ok: false,
            failure: Some(kind.to_string()),
            detail: Some(detail),
        }
    }
}

/// Audits heads in position order against one log key.
pub struct Monitor {
    log_public_key: VerifyingKey,
    next_position: u64,
    prev: Option<SignedTreeHead>,
    evidence: Vec<Evidence>,
}

impl Monitor {
    /// Audit from the first head onward.
    pub fn new(log_public_key: VerifyingKey) -> Self {
        Monitor {
            log_public_key,
            next_position: 0,
            prev: None,
            evidence: Vec::new(),
        }
    }

    /// Audit from `position` onward; the baseline head (position - 1) is
    /// fetched on the first run so index continuity still gets checked.
    pub fn from_position(log_public_key: VerifyingKey, position: u64) -> Self {
        Monitor {
            log_public_key,
            next_position: position,
            prev: None,
            evidence: Vec::new(),
        }
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn next_position(&self) -> u64 {
        self.next_position
    }

    /// Audit every head the log has issued since the last run. Returns
    /// one verdict per new head, in order.
    pub fn run(&mut self, log: &dyn LogReader, now: u64) -> Result<Vec<AuditVerdict>, ApiError> {
        let count = log.sth_count()?;
        let mut verdicts = Vec::new();
        while self.next_position < count {
            let position = self.next_position;
            if self.prev.is_none() && position > 0 {
                self.prev = Some(log.sth_at(position - 1)?);
            }
            let cur = log.sth_at(position)?;
            let prev_size = self.prev.as_ref().map_or(0, |p| p.tree_size);
            let entries = if cur.tree_size >= prev_size {
                log.entries(prev_size, cur.tree_size)?
            } else {
                Vec::new()
            };
            let consistency = if prev_size > 0 && prev_size <= cur.tree_size {
                log.consistency(prev_size, cur.tree_size)?
            } else {
                Vec::new()
            };
            let verdict = self.audit_sth(now, position, &cur, &entries, &consistency);
            self.prev = Some(cur);
            self.next_position += 1;
            verdicts.push(verdict);
        }
        Ok(verdicts)
    }

    /// Audit one head against the previous one: signatures, index
    /// continuity, snapshot rebuild, and main-tree consistency.
    pub fn audit_sth(
        &mut self,
        now: u64,
        position: u64,
        cur: &SignedTreeHead,
        batch_entries: &[LogEntry],
        consistency: &[crate::hashcore::Digest],
    ) -> AuditVerdict {
        let batch_size = batch_entries.len() as u64;

        if !cur.verify_signature(&self.log_public_key) {
            return self.fail(
                now,
                position,
                cur,
                batch_size,
                EvidenceKind::BadSignature,
                "sth signature invalid".into(),
                Artifacts::BadSignature {
                    sth_b64: sth_b64(cur),
                },
            );
        }
        if let Some(prev) = self.prev.clone() {
            if !prev.verify_signature(&self.log_public_key) {
                return self.fail(
                    now,
                    position,
                    cur,
                    batch_size,
                    EvidenceKind::BadSignature,
                    "previous sth signature invalid".into(),
                    Artifacts::BadSignature {
                        sth_b64: sth_b64(&prev),
                    },
                );
            }
        }

        if !cur.extensions_well_formed() || cur.index().is_none() || cur.snapshot().is_none() {
            return self.fail(
                now,
                position,
                cur,
                batch_size,
                EvidenceKind::SnapshotMismatch,
                "malformed extension list".into(),
                Artifacts::SnapshotMismatch {
                    sth_b64: sth_b64(cur),
                    batch_b64: Vec::new(),
                    reason: "malformed extension list".into(),
                },
            );
        }
        let index = cur.index().expect("checked above");

        // Index continuity: successor of the previous head, or equal to
        // the journal position when starting from the beginning.
        let expected = match &self.prev {
            Some(prev) => match prev.index() {
                Some(i) => i + 1,
                None => position,
            },
            None => position,
        };
        if index != expected {
            let kind = if index > expected {
                EvidenceKind::IndexGap
            } else {
                EvidenceKind::IndexReplay
            };
            let prev_b64 = self.prev.as_ref().map(sth_b64);
            return self.fail(
                now,
                position,
                cur,
                batch_size,
                kind,
                format!("index {index}, expected {expected}"),
                Artifacts::IndexAnomaly {
                    expected_index: expected,
                    prev_sth_b64: prev_b64,
                    sth_b64: sth_b64(cur),
                },
            );
        }

        // Snapshot rebuild from the published batch constant.
        if let Err(err) = rebuild(cur, batch_entries) {
            let reason = match &err {
                RebuildError::SnapshotMismatch { tree } => format!(
                    "rebuilt root {} size {} != signed snapshot",
                    tree.root().to_hex(),
                    tree.size()
                ),
                other => other.to_string(),
            };
            return self.fail(
                now,
                position,
                cur,
                batch_size,
                EvidenceKind::SnapshotMismatch,
                reason.clone(),
                Artifacts::SnapshotMismatch {
                    sth_b64: sth_b64(cur),
                    batch_b64: entries_b64(batch_entries),
                    reason,
                },
            );
        }

        // Main-tree consistency link.
        if let Some(prev) = self.prev.clone() {
            let consistent = prev.tree_size <= cur.tree_size
                && rfc6962::verify_consistency(
                    prev.tree_size,
                    cur.tree_size,
                    consistency,
                    &prev.main_root,
                    &cur.main_root,
                );
            if !consistent {
                let proof_b64: Vec<String> = consistency
                    .iter()
                    .map(|d| crate::wtree::wire::b64_encode(d.as_bytes()))
                    .collect();
                return self.fail(
                    now,
                    position,
                    cur,
                    batch_size,
                    EvidenceKind::InconsistentSths,
                    "main-tree consistency proof failed".into(),
                    Artifacts::InconsistentSths {
                        first_b64: sth_b64(&prev),
                        second_b64: sth_b64(cur),
                        consistency_proof_b64: Some(proof_b64),
                        reason: "consistency proof does not verify".into(),
                    },
                );
            }
        }

        AuditVerdict::ok(position, cur, batch_size)
    }

    #[allow(clippy::too_many_arguments)]
    fn fail(
        &mut self,
        now: u64,
        position: u64,
        cur: &SignedTreeHead,
        batch_size: u64,
        kind: EvidenceKind,
        detail: String,
        artifacts: Artifacts,
    ) -> AuditVerdict {
        self.evidence.push(Evidence {
            kind,
            detected_at_ms: now,
            detail: detail.clone(),
            artifacts,
        });
        AuditVerdict::failed(position, cur, batch_size, kind, detail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::InProcessLog;
    use crate::evidence::verify_evidence;
    use crate::hashcore::Digest;
    use crate::logsim::{sign_head_with_key, standard_extensions, LogState};
    use ed25519_dalek::SigningKey;

    fn fixed_key() -> SigningKey {
        SigningKey::from_bytes(&[13u8; 32])
    }

    fn honest_log(batches: usize) -> InProcessLog {
        let log = InProcessLog::new(LogState::ephemeral(fixed_key(), 100).with_rng_seed(4));
        let mut now = 0;
        for b in 0..batches {
            for i in 0..3 {
                log.submit(&format!("s{i}.b{b}.example.org"), vec![b as u8, i])
                    .unwrap();
            }
            log.issue_sth(now).unwrap();
            now += 100;
        }
        log
    }

    #[test]
    fn honest_run_is_all_ok() {
        let log = honest_log(10);
        let mut monitor = Monitor::new(log.public_key());
        let verdicts = monitor.run(&log, 1000).unwrap();
        assert_eq!(verdicts.len(), 10);
        assert!(verdicts.iter().all(|v| v.ok));
        assert!(monitor.evidence().is_empty());
        // Incremental: nothing new on a second run.
        assert!(monitor.run(&log, 1000).unwrap().is_empty());
        // New head picked up.
        log.issue_sth(5000).unwrap();
        let more = monitor.run(&log, 5000).unwrap();
        assert_eq!(more.len(), 1);
        assert!(more[0].ok);
    }

    #[test]
    fn mid_stream_start_fetches_baseline() {
        let log = honest_log(6);
        let mut monitor = Monitor::from_position(log.public_key(), 3);
        let verdicts = monitor.run(&log, 0).unwrap();
        assert_eq!(verdicts.len(), 3);
        assert!(verdicts.iter().all(|v| v.ok));
    }

    /// A log view replacing one head with a forged one (re-signed with
    /// the log key, so only content checks can catch it).
    struct ForgingLog {
        inner: InProcessLog,
        at: u64,
        forge: Box<dyn Fn(&SignedTreeHead) -> SignedTreeHead + Send + Sync>,
    }

    impl LogReader for ForgingLog {
        fn sth_count(&self) -> Result<u64, ApiError> {
            self.inner.sth_count()
        }
        fn sth_at(&self, position: u64) -> Result<SignedTreeHead, ApiError> {
            let sth = self.inner.sth_at(position)?;
            if position == self.at {
                Ok((self.forge)(&sth))
            } else {
                Ok(sth)
            }
        }
        fn entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, ApiError> {
            self.inner.entries(from, to)
        }
        fn consistency(&self, first: u64, second: u64) -> Result<Vec<Digest>, ApiError> {
            self.inner.consistency(first, second)
        }
    }

    #[test]
    fn lwm_omission_is_caught_as_snapshot_mismatch() {
        let log = honest_log(4);
        let key = log.public_key();
        let inner_state = log.0.clone();
        // Forge head 2: rebuild its lwm tree with one entry omitted.
        let forged = ForgingLog {
            inner: log,
            at: 2,
            forge: Box::new(move |sth| {
                let state = inner_state.read().unwrap();
                let snap = sth.snapshot().unwrap();
                let prev_size = sth.tree_size - snap.batch_size;
                let mut tree_entries = state
                    .get_entries(prev_size, sth.tree_size)
                    .unwrap();
                tree_entries.pop(); // hide the last certificate
                drop(state);
                let mut grouped: std::collections::HashMap<_, Vec<Vec<u8>>> =
                    std::collections::HashMap::new();
                for e in tree_entries {
                    grouped.entry(e.subject).or_default().push(e.blob);
                }
                let tree = crate::wtree::WildTree::build(snap.constant, grouped).unwrap();
                sign_head_with_key(
                    &fixed_key(),
                    sth.tree_size,
                    sth.timestamp,
                    sth.main_root,
                    standard_extensions(sth.index().unwrap(), &tree.snapshot()),
                )
            }),
        };
        let mut monitor = Monitor::new(key);
        let verdicts = monitor.run(&forged, 0).unwrap();
        assert!(verdicts[0].ok && verdicts[1].ok && verdicts[3].ok);
        assert!(!verdicts[2].ok);
        assert_eq!(verdicts[2].failure.as_deref(), Some("snapshot-mismatch"));
        assert_eq!(monitor.evidence().len(), 1);
        assert!(verify_evidence(&monitor.evidence()[0], &key));
    }

    #[test]
    fn index_replay_is_caught() {
        let log = honest_log(4);
        let key = log.public_key();
        let forged = ForgingLog {
            inner: log,
            at: 3,
            forge: Box::new(move |sth| {
                let snap = sth.snapshot().unwrap();
                sign_head_with_key(
                    &fixed_key(),
                    sth.tree_size,
                    sth.timestamp,
                    sth.main_root,
                    standard_extensions(2, &snap), // reuse index 2
                )
            }),
        };
        let mut monitor = Monitor::new(key);
        let verdicts = monitor.run(&forged, 0).unwrap();
        assert!(!verdicts[3].ok);
        assert_eq!(verdicts[3].failure.as_deref(), Some("index-replay"));
        assert!(verify_evidence(&monitor.evidence()[0], &key));
    }

    #[test]
    fn inconsistent_main_roots_are_caught() {
        let log = honest_log(4);
        let key = log.public_key();
        let forged = ForgingLog {
            inner: log,
            at: 2,
            forge: Box::new(move |sth| {
                let snap = sth.snapshot().unwrap();
                sign_head_with_key(
                    &fixed_key(),
                    sth.tree_size,
                    sth.timestamp,
                    crate::hashcore::sha256(b"unrelated root"),
                    standard_extensions(sth.index().unwrap(), &snap),
                )
            }),
        };
        let mut monitor = Monitor::new(key);
        let verdicts = monitor.run(&forged, 0).unwrap();
        assert!(!verdicts[2].ok);
        assert_eq!(verdicts[2].failure.as_deref(), Some("inconsistent-sths"));
        assert!(verify_evidence(&monitor.evidence()[0], &key));
    }

    #[test]
    fn verdicts_serialize_as_json_lines() {
        let log = honest_log(2);
        let mut monitor = Monitor::new(log.public_key());
        let verdicts = monitor.run(&log, 0).unwrap();
        let lines: Vec<String> = verdicts
            .iter()
            .map(|v| serde_json::to_string(v).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"position\":0"));
        let back: AuditVerdict = serde_json::from_str(&lines[1]).unwrap();
        assert!(back.ok);
    }
}
