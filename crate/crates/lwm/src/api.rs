//! Role-facing interfaces and JSON wire types.
//!
//! Notifiers, monitors and subjects talk to a log through [`LogReader`]
//! and to a notifier through [`NotificationSource`]; both have an
//! in-process implementation here and HTTP implementations in
//! [`crate::http`]. STH positions are journal positions (0, 1, 2, ...);
//! for an honest log they coincide with the "index" extension.
//!
//! All binary fields cross HTTP as base64 inside JSON.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashcore::Digest;
use crate::logsim::{Extension, LogEntry, LogError, LogState, SignedTreeHead};
use crate::notifier::Notification;
use crate::omega::{SubjectName, WildcardQuery};
use crate::wtree::wire::{b64_decode, b64_encode};

#[derive(Debug, Error, Clone)]
pub enum ApiError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("malformed response: {0}")]
    Decode(String),
}

/// Read access to a log's STH journal, entries, and consistency proofs.
pub trait LogReader: Send + Sync {
    /// Number of issued tree heads.
    fn sth_count(&self) -> Result<u64, ApiError>;
    /// Tree head at journal position `position`.
    fn sth_at(&self, position: u64) -> Result<SignedTreeHead, ApiError>;
    /// Entry slice `[from, to)`.
    fn entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, ApiError>;
    /// Main-tree consistency proof between two sizes.
    fn consistency(&self, first: u64, second: u64) -> Result<Vec<Digest>, ApiError>;

    fn latest_sth(&self) -> Result<Option<SignedTreeHead>, ApiError> {
        match self.sth_count()? {
            0 => Ok(None),
            n => Ok(Some(self.sth_at(n - 1)?)),
        }
    }
}

/// A subscription handle as seen by a subscriber.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SubscriptionInfo {
    pub id: String,
    pub query: String,
    pub apex_included: bool,
}

/// Pull access to a notifier.
pub trait NotificationSource: Send + Sync {
    fn subscribe(&self, query: &WildcardQuery) -> Result<SubscriptionInfo, ApiError>;
    fn unsubscribe(&self, id: &str) -> Result<(), ApiError>;
    /// One notification per STH position in `(since, latest]`, in order.
    /// `since = None` means everything the notifier can serve.
    fn whats_new(&self, id: &str, since: Option<u64>) -> Result<Vec<Notification>, ApiError>;
    fn notification(&self, id: &str, position: u64) -> Result<Notification, ApiError>;
}

/// In-process [`LogReader`] over a shared [`LogState`].
#[derive(Clone)]
pub struct InProcessLog(pub Arc<RwLock<LogState>>);

impl InProcessLog {
    pub fn new(state: LogState) -> Self {
        InProcessLog(Arc::new(RwLock::new(state)))
    }

    pub fn submit(&self, subject: &str, blob: Vec<u8>) -> Result<u64, LogError> {
        self.0.write().unwrap().submit(subject, blob)
    }

    pub fn issue_sth(&self, now: u64) -> Result<SignedTreeHead, LogError> {
        self.0.write().unwrap().issue_sth(now)
    }

    pub fn public_key(&self) -> ed25519_dalek::VerifyingKey {
        self.0.read().unwrap().public_key()
    }
}

fn range_to_api(e: LogError) -> ApiError {
    match e {
        LogError::Range(m) => ApiError::NotFound(m),
        other => ApiError::Unreachable(other.to_string()),
    }
}

impl LogReader for InProcessLog {
    fn sth_count(&self) -> Result<u64, ApiError> {
        Ok(self.0.read().unwrap().sth_count())
    }

    fn sth_at(&self, position: u64) -> Result<SignedTreeHead, ApiError> {
        self.0
            .read()
            .unwrap()
            .sth_at(position)
            .map(Clone::clone)
            .map_err(range_to_api)
    }

    fn entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, ApiError> {
        self.0
            .read()
            .unwrap()
            .get_entries(from, to)
            .map_err(range_to_api)
    }

    fn consistency(&self, first: u64, second: u64) -> Result<Vec<Digest>, ApiError> {
        self.0
            .read()
            .unwrap()
            .consistency_proof(first, second)
            .map_err(range_to_api)
    }
}

impl NotificationSource for crate::notifier::Notifier {
    fn subscribe(&self, query: &WildcardQuery) -> Result<SubscriptionInfo, ApiError> {
        let sub = crate::notifier::Notifier::subscribe(self, query)
            .map_err(|e| ApiError::Unreachable(e.to_string()))?;
        Ok(SubscriptionInfo {
            id: sub.id,
            query: sub.query,
            apex_included: sub.apex_included,
        })
    }

    fn unsubscribe(&self, id: &str) -> Result<(), ApiError> {
        crate::notifier::Notifier::unsubscribe(self, id)
            .map_err(|e| ApiError::NotFound(e.to_string()))
    }

    fn whats_new(&self, id: &str, since: Option<u64>) -> Result<Vec<Notification>, ApiError> {
        crate::notifier::Notifier::whats_new(self, id, since).map_err(notifier_to_api)
    }

    fn notification(&self, id: &str, position: u64) -> Result<Notification, ApiError> {
        crate::notifier::Notifier::notification(self, id, position).map_err(notifier_to_api)
    }
}

fn notifier_to_api(e: crate::notifier::NotifierError) -> ApiError {
    use crate::notifier::NotifierError::*;
    match e {
        UnknownSubscription(id) => ApiError::NotFound(format!("subscription {id}")),
        NotYetSeen { position } => ApiError::NotFound(format!("position {position}")),
        BatchEvicted { position } => ApiError::NotFound(format!("batch {position} evicted")),
        other => ApiError::Unreachable(other.to_string()),
    }
}

// --- JSON wire types ---

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExtensionJson {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SthJson {
    pub tree_size: u64,
    pub timestamp: u64,
    pub main_root: String,
    pub extensions: Vec<ExtensionJson>,
    pub signature: String,
}

impl From<&SignedTreeHead> for SthJson {
    fn from(sth: &SignedTreeHead) -> Self {
        SthJson {
            tree_size: sth.tree_size,
            timestamp: sth.timestamp,
            main_root: b64_encode(sth.main_root.as_bytes()),
            extensions: sth
                .extensions
                .iter()
                .map(|e| ExtensionJson {
                    key: e.key.clone(),
                    value: b64_encode(&e.value),
                })
                .collect(),
            signature: b64_encode(&sth.signature.to_bytes()),
        }
    }
}

impl TryFrom<&SthJson> for SignedTreeHead {
    type Error = ApiError;

    fn try_from(j: &SthJson) -> Result<Self, ApiError> {
        let bad = |m: &str| ApiError::Decode(m.into());
        let root = b64_decode(&j.main_root).map_err(|_| bad("main_root"))?;
        let main_root = Digest::from_slice(&root).ok_or_else(|| bad("main_root length"))?;
        let sig = b64_decode(&j.signature).map_err(|_| bad("signature"))?;
        let sig: [u8; 64] = sig
            .as_slice()
            .try_into()
            .map_err(|_| bad("signature length"))?;
        let mut extensions = Vec::with_capacity(j.extensions.len());
        for e in &j.extensions {
            extensions.push(Extension {
                key: e.key.clone(),
                value: b64_decode(&e.value).map_err(|_| bad("extension value"))?,
            });
        }
        Ok(SignedTreeHead {
            tree_size: j.tree_size,
            timestamp: j.timestamp,
            main_root,
            extensions,
            signature: ed25519_dalek::Signature::from_bytes(&sig),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EntryJson {
    pub seq: u64,
    pub subject: String,
    pub blob: String,
}

impl From<&LogEntry> for EntryJson {
    fn from(e: &LogEntry) -> Self {
        EntryJson {
            seq: e.seq,
            subject: e.subject.as_str().to_string(),
            blob: b64_encode(&e.blob),
        }
    }
}

impl TryFrom<&EntryJson> for LogEntry {
    type Error = ApiError;

    fn try_from(j: &EntryJson) -> Result<Self, ApiError> {
        Ok(LogEntry {
            seq: j.seq,
            subject: SubjectName::normalize(&j.subject)
                .map_err(|e| ApiError::Decode(e.to_string()))?,
            blob: b64_decode(&j.blob).map_err(|_| ApiError::Decode("blob".into()))?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SthResponse {
    pub position: u64,
    pub sth: SthJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntriesResponse {
    pub entries: Vec<EntryJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyResponse {
    pub first: u64,
    pub second: u64,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub subject: String,
    pub blob: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub query: String,
    #[serde(default = "default_apex")]
    pub apex_included: bool,
    /// Optional push callback; the notifier POSTs notification bodies to
    /// this URL as they appear.
    #[serde(default)]
    pub callback_url: Option<String>,
}

fn default_apex() -> bool {
    true
}

/// A notification as it crosses HTTP: the STH as JSON, the proof in its
/// canonical binary form (base64), and the matched certificates grouped
/// per leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotificationJson {
    pub position: u64,
    pub sth: SthJson,
    pub proof: String,
    pub certificates: Vec<Vec<String>>,
}

impl From<&Notification> for NotificationJson {
    fn from(n: &Notification) -> Self {
        NotificationJson {
            position: n.position,
            sth: SthJson::from(&n.sth),
            proof: b64_encode(&n.proof.to_bytes()),
            certificates: n
                .certificates
                .iter()
                .map(|blobs| blobs.iter().map(|b| b64_encode(b)).collect())
                .collect(),
        }
    }
}

impl TryFrom<&NotificationJson> for Notification {
    type Error = ApiError;

    fn try_from(j: &NotificationJson) -> Result<Self, ApiError> {
        let raw = b64_decode(&j.proof).map_err(|_| ApiError::Decode("proof".into()))?;
        let proof = crate::wtree::WildcardProof::from_bytes(&raw)
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        let mut certificates = Vec::with_capacity(j.certificates.len());
        for blobs in &j.certificates {
            let mut out = Vec::with_capacity(blobs.len());
            for b in blobs {
                out.push(b64_decode(b).map_err(|_| ApiError::Decode("certificate".into()))?);
            }
            certificates.push(out);
        }
        Ok(Notification {
            position: j.position,
            sth: SignedTreeHead::try_from(&j.sth)?,
            proof,
            certificates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ed25519_dalek::SigningKey;

    #[test]
    fn sth_json_round_trip() {
        let mut log = LogState::ephemeral(SigningKey::from_bytes(&[9u8; 32]), 100);
        log.submit("a.com", b"1".to_vec()).unwrap();
        let sth = log.issue_sth(0).unwrap();
        let json = SthJson::from(&sth);
        let text = serde_json::to_string(&json).unwrap();
        let back: SthJson = serde_json::from_str(&text).unwrap();
        assert_eq!(SignedTreeHead::try_from(&back).unwrap(), sth);
    }

    #[test]
    fn entry_json_round_trip() {
        let e = LogEntry {
            seq: 3,
            subject: SubjectName::normalize("x.example.org").unwrap(),
            blob: vec![1, 2, 3, 255],
        };
        let j = EntryJson::from(&e);
        assert_eq!(LogEntry::try_from(&j).unwrap(), e);
    }

    #[test]
    fn in_process_log_reader() {
        let log = InProcessLog::new(LogState::ephemeral(
            SigningKey::from_bytes(&[7u8; 32]),
            100,
        ));
        assert_eq!(log.sth_count().unwrap(), 0);
        assert!(log.latest_sth().unwrap().is_none());
        log.submit("a.com", b"1".to_vec()).unwrap();
        log.issue_sth(0).unwrap();
        assert_eq!(log.sth_count().unwrap(), 1);
        assert_eq!(log.latest_sth().unwrap().unwrap().index(), Some(0));
        assert!(log.sth_at(5).is_err());
        assert_eq!(log.entries(0, 1).unwrap().len(), 1);
    }
}
