//! The untrusted notifier.
//!
//! Polls a log for new tree heads, downloads each batch, rebuilds the
//! per-batch wild-card tree with the published batch constant, and serves
//! verifiable notifications per subscription: a pull interface ("what's
//! new since STH x") and an optional push callback per subscription.
//!
//! The notifier holds no key material and is trusted with nothing: every
//! notification it emits is verifiable against the embedded signed tree
//! head alone. Optionally it audits rebuilds (root and size against the
//! "lwm" extension) and records evidence on mismatch.
//!
//! Batches become visible to serving atomically after a full rebuild; one
//! polling task mutates the cache while readers serve concurrently.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ApiError, LogReader};
use crate::evidence::{entries_b64, sth_b64, Artifacts, Evidence, EvidenceKind};
use crate::logsim::{LogEntry, SignedTreeHead};
use crate::omega::{SubjectName, WildcardQuery};
use crate::wtree::{WildTree, WildcardProof};

/// Default number of recent batches kept: one week at hourly heads.
pub const DEFAULT_RETENTION: usize = 168;

#[derive(Debug, Error)]
pub enum NotifierError {
    #[error("log unreachable: {0}")]
    LogUnreachable(String),
    #[error("log refuses history for position {position}")]
    IndexGapUnfillable { position: u64 },
    #[error("rebuilt batch {position} does not match its signed snapshot")]
    SnapshotMismatch { position: u64 },
    #[error("batch {position} evicted from cache")]
    BatchEvicted { position: u64 },
    #[error("batch {position} not seen yet")]
    NotYetSeen { position: u64 },
    #[error("unknown subscription {0}")]
    UnknownSubscription(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One subscriber's standing query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subscription {
    pub id: String,
    pub query: String,
    pub apex_included: bool,
    /// Highest STH position already delivered (push) or acknowledged via
    /// a pull's `since` parameter. `None` until the first one.
    pub last_acknowledged_index: Option<u64>,
}

impl Subscription {
    pub fn parsed_query(&self) -> WildcardQuery {
        WildcardQuery::parse_with_apex(&self.query, self.apex_included)
            .expect("stored queries are valid")
    }
}

/// A verifiable notification: everything a subject needs for one STH.
#[derive(Debug, Clone)]
pub struct Notification {
    /// Journal position of the head (equals its index for honest logs).
    pub position: u64,
    pub sth: SignedTreeHead,
    pub proof: WildcardProof,
    /// Certificate blobs grouped per matched leaf, aligned with
    /// `proof.matches`. Empty in proofs-only mode.
    pub certificates: Vec<Vec<Vec<u8>>>,
}

/// Push delivery endpoint registered for a subscription.
pub trait PushTarget: Send + Sync {
    fn deliver(&self, notification: &Notification) -> Result<(), ApiError>;
}

/// Why a rebuild failed.
#[derive(Debug, Error)]
pub enum RebuildError {
    #[error("sth lacks a well-formed lwm extension")]
    MalformedExtension,
    #[error("rebuilt tree disagrees with the signed snapshot")]
    SnapshotMismatch { tree: Box<WildTree> },
    #[error("batch contains a malformed subject name")]
    BadEntry,
}

/// Rebuild the wild-card tree for a head from its exact batch slice,
/// using the published batch constant, and audit root and size against
/// the "lwm" extension. Entry order within the slice is irrelevant.
pub fn rebuild(sth: &SignedTreeHead, entries: &[LogEntry]) -> Result<WildTree, RebuildError> {
    let snapshot = match (sth.extensions_well_formed(), sth.snapshot(), sth.index()) {
        (true, Some(s), Some(_)) => s,
        _ => return Err(RebuildError::MalformedExtension),
    };
    let mut grouped: HashMap<SubjectName, Vec<Vec<u8>>> = HashMap::new();
    for e in entries {
        grouped
            .entry(e.subject.clone())
            .or_default()
            .push(e.blob.clone());
    }
    let tree = WildTree::build(snapshot.constant, grouped).map_err(|_| RebuildError::BadEntry)?;
    if tree.root() != snapshot.root || tree.size() != snapshot.batch_size {
        return Err(RebuildError::SnapshotMismatch { tree: Box::new(tree) });
    }
    Ok(tree)
}

struct CachedBatch {
    sth: SignedTreeHead,
    tree: WildTree,
    certs: HashMap<SubjectName, Vec<Vec<u8>>>,
}

struct Inner {
    batches: BTreeMap<u64, Arc<CachedBatch>>,
    /// Count of head positions processed so far (cached or skipped).
    next_position: u64,
    subscriptions: HashMap<String, Subscription>,
    push_targets: HashMap<String, Arc<dyn PushTarget>>,
    evidence: Vec<Evidence>,
}

pub struct NotifierConfig {
    pub retention: usize,
    /// Audit each rebuild against the signed snapshot. A colluding or
    /// lazy notifier may disable this; subjects lose nothing either way.
    pub verify_rebuilds: bool,
    /// Omit certificate payloads from notifications (bandwidth tests).
    pub proofs_only: bool,
    /// Persist subscriptions under this directory.
    pub store_dir: Option<PathBuf>,
}

impl Default for NotifierConfig {
    fn default() -> Self {
        NotifierConfig {
            retention: DEFAULT_RETENTION,
            verify_rebuilds: true,
            proofs_only: false,
            store_dir: None,
        }
    }
}

pub struct Notifier {
    log: Arc<dyn LogReader>,
    retention: usize,
    verify_rebuilds: bool,
    proofs_only: bool,
    subs_path: Option<PathBuf>,
    poll_lock: Mutex<()>,
    inner: RwLock<Inner>,
}

impl Notifier {
    pub fn new(log: Arc<dyn LogReader>, config: NotifierConfig) -> Result<Self, NotifierError> {
        let subs_path = match &config.store_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(dir.join("subscriptions.json"))
            }
            None => None,
        };
        let subscriptions = match &subs_path {
            Some(p) if p.exists() => {
                let data = std::fs::read(p)?;
                let subs: Vec<Subscription> = serde_json::from_slice(&data)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                subs.into_iter().map(|s| (s.id.clone(), s)).collect()
            }
            _ => HashMap::new(),
        };
        Ok(Notifier {
            log,
            retention: config.retention.max(1),
            verify_rebuilds: config.verify_rebuilds,
            proofs_only: config.proofs_only,
            subs_path,
            poll_lock: Mutex::new(()),
            inner: RwLock::new(Inner {
                batches: BTreeMap::new(),
                next_position: 0,
                subscriptions,
                push_targets: HashMap::new(),
                evidence: Vec::new(),
            }),
        })
    }

    /// Fetch and rebuild every head issued since the last poll, in
    /// position order. Returns the newly processed positions. Re-polling
    /// with nothing new returns an empty list.
    pub fn poll(&self, now: u64) -> Result<Vec<u64>, NotifierError> {
        let _guard = self.poll_lock.lock().unwrap();
        let count = self
            .log
            .sth_count()
            .map_err(|e| NotifierError::LogUnreachable(e.to_string()))?;
        let start = self.inner.read().unwrap().next_position;
        let mut new_positions = Vec::new();
        let mut prev_size: Option<u64> = None;
        for position in start..count {
            let sth = match self.log.sth_at(position) {
                Ok(sth) => sth,
                Err(ApiError::Unreachable(e)) => return Err(NotifierError::LogUnreachable(e)),
                Err(_) => {
                    self.record_gap_evidence(now, position)?;
                    return Err(NotifierError::IndexGapUnfillable { position });
                }
            };
            let from = match prev_size {
                Some(s) => s,
                None if position == 0 => 0,
                None => {
                    self.log
                        .sth_at(position - 1)
                        .map_err(|e| NotifierError::LogUnreachable(e.to_string()))?
                        .tree_size
                }
            };
            let entries = self
                .log
                .entries(from, sth.tree_size)
                .map_err(|e| NotifierError::LogUnreachable(e.to_string()))?;
            prev_size = Some(sth.tree_size);

            // Build outside the lock; insert atomically below.
            let tree = match rebuild(&sth, &entries) {
                Ok(tree) => Some(tree),
                Err(RebuildError::SnapshotMismatch { tree }) if !self.verify_rebuilds => {
                    Some(*tree)
                }
                Err(err) => {
                    let reason = err.to_string();
                    let ev = Evidence {
                        kind: EvidenceKind::SnapshotMismatch,
                        detected_at_ms: now,
                        detail: format!("batch {position}: {reason}"),
                        artifacts: Artifacts::SnapshotMismatch {
                            sth_b64: sth_b64(&sth),
                            batch_b64: entries_b64(&entries),
                            reason,
                        },
                    };
                    self.inner.write().unwrap().evidence.push(ev);
                    None
                }
            };
            let mut inner = self.inner.write().unwrap();
            if let Some(tree) = tree {
                let mut certs: HashMap<SubjectName, Vec<Vec<u8>>> = HashMap::new();
                for e in &entries {
                    certs
                        .entry(e.subject.clone())
                        .or_default()
                        .push(e.blob.clone());
                }
                inner
                    .batches
                    .insert(position, Arc::new(CachedBatch { sth, tree, certs }));
                while inner.batches.len() > self.retention {
                    let oldest = *inner.batches.keys().next().unwrap();
                    inner.batches.remove(&oldest);
                }
            }
            inner.next_position = position + 1;
            new_positions.push(position);
        }
        self.push_deliveries(&new_positions);
        Ok(new_positions)
    }

    fn record_gap_evidence(&self, now: u64, position: u64) -> Result<(), NotifierError> {
        // The log served a later head but refuses this position: the
        // later head itself attests the gap.
        let latest = self
            .log
            .latest_sth()
            .map_err(|e| NotifierError::LogUnreachable(e.to_string()))?;
        if let Some(latest) = latest {
            let prev = {
                let inner = self.inner.read().unwrap();
                inner.batches.values().last().map(|b| sth_b64(&b.sth))
            };
            let ev = Evidence {
                kind: EvidenceKind::IndexGap,
                detected_at_ms: now,
                detail: format!("log refuses history for position {position}"),
                artifacts: Artifacts::IndexAnomaly {
                    expected_index: position,
                    prev_sth_b64: prev,
                    sth_b64: sth_b64(&latest),
                },
            };
            self.inner.write().unwrap().evidence.push(ev);
        }
        Ok(())
    }

    fn push_deliveries(&self, new_positions: &[u64]) {
        if new_positions.is_empty() {
            return;
        }
        let targets: Vec<(String, Arc<dyn PushTarget>)> = {
            let inner = self.inner.read().unwrap();
            inner
                .push_targets
                .iter()
                .map(|(id, t)| (id.clone(), t.clone()))
                .collect()
        };
        for (id, target) in targets {
            for &p in new_positions {
                let deliverable = {
                    let inner = self.inner.read().unwrap();
                    match inner.subscriptions.get(&id) {
                        Some(sub) => sub.last_acknowledged_index.map_or(true, |a| p > a),
                        None => false,
                    }
                };
                if !deliverable {
                    continue;
                }
                match self.notification(&id, p) {
                    Ok(n) => {
                        if target.deliver(&n).is_ok() {
                            let mut inner = self.inner.write().unwrap();
                            if let Some(sub) = inner.subscriptions.get_mut(&id) {
                                sub.last_acknowledged_index = Some(p);
                            }
                            drop(inner);
                            let _ = self.persist_subscriptions();
                        }
                    }
                    Err(_) => continue,
                }
            }
        }
    }

    pub fn subscribe(&self, query: &WildcardQuery) -> Result<Subscription, NotifierError> {
        let mut token = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut token);
        let id: String = token.iter().map(|b| format!("{b:02x}")).collect();
        let sub = Subscription {
            id: id.clone(),
            query: query.as_str().to_string(),
            apex_included: query.apex_included(),
            last_acknowledged_index: None,
        };
        self.inner
            .write()
            .unwrap()
            .subscriptions
            .insert(id, sub.clone());
        self.persist_subscriptions()?;
        Ok(sub)
    }

    pub fn unsubscribe(&self, id: &str) -> Result<(), NotifierError> {
        let removed = {
            let mut inner = self.inner.write().unwrap();
            inner.push_targets.remove(id);
            inner.subscriptions.remove(id)
        };
        match removed {
            Some(_) => {
                self.persist_subscriptions()?;
                Ok(())
            }
            None => Err(NotifierError::UnknownSubscription(id.into())),
        }
    }

    /// Register a push callback for an existing subscription.
    pub fn register_push(
        &self,
        id: &str,
        target: Arc<dyn PushTarget>,
    ) -> Result<(), NotifierError> {
        let mut inner = self.inner.write().unwrap();
        if !inner.subscriptions.contains_key(id) {
            return Err(NotifierError::UnknownSubscription(id.into()));
        }
        inner.push_targets.insert(id.to_string(), target);
        Ok(())
    }

    fn persist_subscriptions(&self) -> Result<(), NotifierError> {
        if let Some(path) = &self.subs_path {
            let subs: Vec<Subscription> = {
                let inner = self.inner.read().unwrap();
                inner.subscriptions.values().cloned().collect()
            };
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&subs).unwrap())?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(())
    }

    /// The verifiable notification for one subscription and head position.
    pub fn notification(&self, id: &str, position: u64) -> Result<Notification, NotifierError> {
        let inner = self.inner.read().unwrap();
        let sub = inner
            .subscriptions
            .get(id)
            .ok_or_else(|| NotifierError::UnknownSubscription(id.into()))?;
        let batch = match inner.batches.get(&position) {
            Some(b) => b.clone(),
            None if position < inner.next_position => {
                return Err(NotifierError::BatchEvicted { position })
            }
            None => return Err(NotifierError::NotYetSeen { position }),
        };
        let query = sub.parsed_query();
        drop(inner);
        let proof = batch.tree.prove(&query);
        let certificates = if self.proofs_only {
            Vec::new()
        } else {
            proof
                .matches
                .iter()
                .map(|m| batch.certs.get(&m.name).cloned().unwrap_or_default())
                .collect()
        };
        Ok(Notification {
            position,
            sth: batch.sth.clone(),
            proof,
            certificates,
        })
    }

    /// One notification per position in `(since, latest]`, in order and
    /// gap-free. `since = None` serves everything still cached.
    pub fn whats_new(
        &self,
        id: &str,
        since: Option<u64>,
    ) -> Result<Vec<Notification>, NotifierError> {
        let next = {
            let inner = self.inner.read().unwrap();
            if !inner.subscriptions.contains_key(id) {
                return Err(NotifierError::UnknownSubscription(id.into()));
            }
            inner.next_position
        };
        let start = since.map_or(0, |s| s + 1);
        let mut out = Vec::new();
        for position in start..next {
            out.push(self.notification(id, position)?);
        }
        if let Some(s) = since {
            let mut inner = self.inner.write().unwrap();
            if let Some(sub) = inner.subscriptions.get_mut(id) {
                if sub.last_acknowledged_index.map_or(true, |a| s > a) {
                    sub.last_acknowledged_index = Some(s);
                }
            }
            drop(inner);
            self.persist_subscriptions()?;
        }
        Ok(out)
    }

    /// Highest processed position, if any.
    pub fn latest_position(&self) -> Option<u64> {
        let inner = self.inner.read().unwrap();
        inner.next_position.checked_sub(1)
    }

    pub fn evidence(&self) -> Vec<Evidence> {
        self.inner.read().unwrap().evidence.clone()
    }

    pub fn subscription(&self, id: &str) -> Option<Subscription> {
        self.inner.read().unwrap().subscriptions.get(id).cloned()
    }
}
