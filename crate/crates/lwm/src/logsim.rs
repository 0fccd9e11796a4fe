//! A minimal CT/bis-style log.
//!
//! The log accepts certificate submissions, batches them per STH interval,
//! maintains the usual append-only main tree, and signs tree heads carrying
//! two extensions: `index` (a gap-free counter, big-endian u64) and `lwm`
//! (the encoded per-batch wild-card tree snapshot, including the batch
//! constant so anyone can recompute it).
//!
//! The signed statement is Ed25519 over the SHA-256 of the canonical head
//! serialization:
//!
//! ```text
//! tree_size u64 | timestamp u64 | main_root (32B) | ext_count u16
//!   | (key_len u8 | key | val_len u16 | value)*
//! ```
//!
//! State persists as an append-only entry file plus an STH journal, both
//! length-prefixed; reopening replays them.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use thiserror::Error;

use crate::hashcore::{sha256, BatchConstant, Digest};
use crate::omega::{OmegaError, SubjectName};
use crate::rfc6962;
use crate::wtree::{Snapshot, WildTree};

pub const EXT_INDEX: &str = "index";
pub const EXT_LWM: &str = "lwm";

/// Sign an arbitrary tree head with `key`. Backs test fixtures and the
/// demo's fault injection; the log itself signs through [`LogState`].
pub fn sign_head_with_key(
    key: &SigningKey,
    tree_size: u64,
    timestamp: u64,
    main_root: Digest,
    extensions: Vec<Extension>,
) -> SignedTreeHead {
    let mut sth = SignedTreeHead {
        tree_size,
        timestamp,
        main_root,
        extensions,
        signature: Signature::from_bytes(&[0u8; 64]),
    };
    let msg = sha256(&sth.canonical_bytes());
    sth.signature = key.sign(msg.as_bytes());
    sth
}

/// The standard extension pair for a head: `index` then `lwm`.
pub fn standard_extensions(index: u64, snapshot: &Snapshot) -> Vec<Extension> {
    vec![
        Extension {
            key: EXT_INDEX.into(),
            value: index.to_be_bytes().to_vec(),
        },
        Extension {
            key: EXT_LWM.into(),
            value: snapshot.encode(),
        },
    ]
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("rate limited: next STH allowed at {earliest_ms}")]
    RateLimited { earliest_ms: u64 },
    #[error("range error: {0}")]
    Range(String),
    #[error(transparent)]
    Name(#[from] OmegaError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt log store: {0}")]
    Corrupt(String),
}

/// One submitted certificate: an opaque blob plus its subject name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub subject: SubjectName,
    pub blob: Vec<u8>,
}

impl LogEntry {
    /// Canonical bytes: `seq u64 | subject_len u16 | subject | blob_len u32 | blob`.
    pub fn serialized(&self) -> Vec<u8> {
        let s = self.subject.as_str().as_bytes();
        let mut out = Vec::with_capacity(14 + s.len() + self.blob.len());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(s.len() as u16).to_be_bytes());
        out.extend_from_slice(s);
        out.extend_from_slice(&(self.blob.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.blob);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, LogError> {
        let err = |m: &str| LogError::Corrupt(m.into());
        if buf.len() < 14 {
            return Err(err("entry too short"));
        }
        let seq = u64::from_be_bytes(buf[0..8].try_into().unwrap());
        let slen = u16::from_be_bytes(buf[8..10].try_into().unwrap()) as usize;
        if buf.len() < 10 + slen + 4 {
            return Err(err("entry subject truncated"));
        }
        let subject = std::str::from_utf8(&buf[10..10 + slen])
            .map_err(|_| err("entry subject not UTF-8"))?;
        let subject = SubjectName::normalize(subject)?;
        let blen =
            u32::from_be_bytes(buf[10 + slen..14 + slen].try_into().unwrap()) as usize;
        if buf.len() != 14 + slen + blen {
            return Err(err("entry blob length mismatch"));
        }
        let blob = buf[14 + slen..].to_vec();
        Ok(LogEntry { seq, subject, blob })
    }

    /// Main-tree leaf hash of this entry.
    pub fn leaf_hash(&self) -> Digest {
        rfc6962::leaf_hash(&self.serialized())
    }
}

/// An STH extension: unique short key, opaque value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub key: String,
    pub value: Vec<u8>,
}

/// A signed tree head with its extension list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedTreeHead {
    pub tree_size: u64,
    pub timestamp: u64,
    pub main_root: Digest,
    pub extensions: Vec<Extension>,
    pub signature: Signature,
}

impl SignedTreeHead {
    /// The canonical serialization covered by the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.tree_size.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(self.main_root.as_bytes());
        out.extend_from_slice(&(self.extensions.len() as u16).to_be_bytes());
        for ext in &self.extensions {
            out.push(ext.key.len() as u8);
            out.extend_from_slice(ext.key.as_bytes());
            out.extend_from_slice(&(ext.value.len() as u16).to_be_bytes());
            out.extend_from_slice(&ext.value);
        }
        out
    }

    /// Canonical bytes followed by the 64-byte signature; the persistence
    /// and evidence record format.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        out.extend_from_slice(&self.signature.to_bytes());
        out
    }

    pub fn from_signed_bytes(buf: &[u8]) -> Result<Self, LogError> {
        let err = |m: &str| LogError::Corrupt(m.into());
        if buf.len() < 50 + 64 {
            return Err(err("sth too short"));
        }
        let (body, sig) = buf.split_at(buf.len() - 64);
        let tree_size = u64::from_be_bytes(body[0..8].try_into().unwrap());
        let timestamp = u64::from_be_bytes(body[8..16].try_into().unwrap());
        let main_root = Digest::from_slice(&body[16..48]).unwrap();
        let ext_count = u16::from_be_bytes(body[48..50].try_into().unwrap()) as usize;
        let mut extensions = Vec::with_capacity(ext_count.min(16));
        let mut pos = 50;
        for _ in 0..ext_count {
            if body.len() < pos + 1 {
                return Err(err("extension truncated"));
            }
            let klen = body[pos] as usize;
            pos += 1;
            if body.len() < pos + klen + 2 {
                return Err(err("extension key truncated"));
            }
            let key = std::str::from_utf8(&body[pos..pos + klen])
                .map_err(|_| err("extension key not UTF-8"))?
                .to_string();
            pos += klen;
            let vlen = u16::from_be_bytes(body[pos..pos + 2].try_into().unwrap()) as usize;
            pos += 2;
            if body.len() < pos + vlen {
                return Err(err("extension value truncated"));
            }
            let value = body[pos..pos + vlen].to_vec();
            pos += vlen;
            extensions.push(Extension { key, value });
        }
        if pos != body.len() {
            return Err(err("trailing bytes in sth"));
        }
        let signature = Signature::from_bytes(sig.try_into().unwrap());
        Ok(SignedTreeHead {
            tree_size,
            timestamp,
            main_root,
            extensions,
            signature,
        })
    }

    pub fn verify_signature(&self, key: &VerifyingKey) -> bool {
        let msg = sha256(&self.canonical_bytes());
        key.verify(msg.as_bytes(), &self.signature).is_ok()
    }

    /// Extension list well-formedness: keys strictly sorted (hence unique).
    pub fn extensions_well_formed(&self) -> bool {
        self.extensions.windows(2).all(|w| w[0].key < w[1].key)
    }

    pub fn extension(&self, key: &str) -> Option<&[u8]> {
        self.extensions
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_slice())
    }

    /// The "index" extension value, if present and well-formed.
    pub fn index(&self) -> Option<u64> {
        let v = self.extension(EXT_INDEX)?;
        Some(u64::from_be_bytes(v.try_into().ok()?))
    }

    /// The decoded "lwm" snapshot, if present and well-formed.
    pub fn snapshot(&self) -> Option<Snapshot> {
        Snapshot::decode(self.extension(EXT_LWM)?).ok()
    }
}

struct LogStore {
    entries: File,
    sths: File,
}

const KEY_FILE: &str = "log.key";
/// Raw 32-byte Ed25519 verification key, written next to the store.
pub const PUBKEY_FILE: &str = "log.pub";
const ENTRIES_FILE: &str = "entries.log";
const STH_FILE: &str = "sth.journal";

impl LogStore {
    fn open(dir: &Path) -> Result<Self, LogError> {
        std::fs::create_dir_all(dir)?;
        let entries = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(ENTRIES_FILE))?;
        let sths = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(STH_FILE))?;
        Ok(LogStore { entries, sths })
    }

    fn load_or_create_key(dir: &Path) -> Result<SigningKey, LogError> {
        let path = dir.join(KEY_FILE);
        let key = if path.exists() {
            let bytes = std::fs::read(&path)?;
            let seed: [u8; 32] = bytes
                .as_slice()
                .try_into()
                .map_err(|_| LogError::Corrupt("bad key file length".into()))?;
            SigningKey::from_bytes(&seed)
        } else {
            let mut seed = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut seed);
            let key = SigningKey::from_bytes(&seed);
            std::fs::write(&path, seed)?;
            key
        };
        // Publish the verification key beside the store for subjects and
        // monitors to pick up out of band.
        std::fs::write(dir.join(PUBKEY_FILE), key.verifying_key().to_bytes())?;
        Ok(key)
    }

    fn append_entry(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        write_record(&mut self.entries, &entry.serialized())
    }

    fn append_sth(&mut self, sth: &SignedTreeHead) -> Result<(), LogError> {
        write_record(&mut self.sths, &sth.signed_bytes())
    }
}

fn write_record(f: &mut File, data: &[u8]) -> Result<(), LogError> {
    f.write_all(&(data.len() as u32).to_be_bytes())?;
    f.write_all(data)?;
    f.flush()?;
    Ok(())
}

/// Read length-prefixed records; a torn trailing record (partial write at
/// the moment of a crash) is dropped rather than treated as corruption.
pub(crate) fn read_records(path: &Path) -> Result<Vec<Vec<u8>>, LogError> {
    let mut out = Vec::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut r = BufReader::new(File::open(path)?);
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len) as usize;
        let mut buf = vec![0u8; len];
        match r.read_exact(&mut buf) {
            Ok(()) => out.push(buf),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// The log: append-only entries, STH history, and the signing key.
pub struct LogState {
    entries: Vec<LogEntry>,
    leaf_hashes: Vec<Digest>,
    sth_history: Vec<SignedTreeHead>,
    next_index: u64,
    signing_key: SigningKey,
    interval_ms: u64,
    rng: StdRng,
    store: Option<LogStore>,
}

impl LogState {
    /// An in-memory log (no persistence) with the given signing key.
    pub fn ephemeral(signing_key: SigningKey, interval_ms: u64) -> Self {
        LogState {
            entries: Vec::new(),
            leaf_hashes: Vec::new(),
            sth_history: Vec::new(),
            next_index: 0,
            signing_key,
            interval_ms,
            rng: StdRng::from_entropy(),
            store: None,
        }
    }

    /// Deterministic batch constants; for reproducible simulations.
    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng = StdRng::seed_from_u64(seed);
        self
    }

    /// Open (or create) a persistent log in `dir`, replaying any existing
    /// entry file and STH journal.
    pub fn open(dir: &Path, interval_ms: u64) -> Result<Self, LogError> {
        let signing_key = LogStore::load_or_create_key({
            std::fs::create_dir_all(dir)?;
            dir
        })?;
        let mut state = LogState::ephemeral(signing_key, interval_ms);
        for rec in read_records(&dir.join(ENTRIES_FILE))? {
            let entry = LogEntry::from_bytes(&rec)?;
            if entry.seq != state.entries.len() as u64 {
                return Err(LogError::Corrupt("entry sequence gap".into()));
            }
            state.leaf_hashes.push(entry.leaf_hash());
            state.entries.push(entry);
        }
        for rec in read_records(&dir.join(STH_FILE))? {
            let sth = SignedTreeHead::from_signed_bytes(&rec)?;
            if sth.index() != Some(state.next_index) {
                return Err(LogError::Corrupt("sth index gap".into()));
            }
            if sth.tree_size > state.entries.len() as u64 {
                // The journal is ahead of the entry file (torn write
                // between the two appends): drop the dangling head.
                break;
            }
            state.next_index += 1;
            state.sth_history.push(sth);
        }
        state.store = Some(LogStore::open(dir)?);
        Ok(state)
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }

    pub fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    pub fn tree_size(&self) -> u64 {
        self.entries.len() as u64
    }

    /// Append a certificate; it joins the next batch.
    pub fn submit(&mut self, subject: &str, blob: Vec<u8>) -> Result<u64, LogError> {
        let subject = SubjectName::normalize(subject)?;
        let seq = self.entries.len() as u64;
        let entry = LogEntry { seq, subject, blob };
        if let Some(store) = &mut self.store {
            store.append_entry(&entry)?;
        }
        self.leaf_hashes.push(entry.leaf_hash());
        self.entries.push(entry);
        Ok(seq)
    }

    /// Issue the next STH over everything submitted so far. The batch
    /// since the previous head gets a fresh wild-card tree (a fresh batch
    /// constant included); an empty batch still yields a head.
    pub fn issue_sth(&mut self, now: u64) -> Result<SignedTreeHead, LogError> {
        let prev_size = match self.sth_history.last() {
            Some(prev) => {
                let earliest = prev.timestamp.saturating_add(self.interval_ms);
                if now < earliest {
                    return Err(LogError::RateLimited { earliest_ms: earliest });
                }
                prev.tree_size
            }
            None => 0,
        };
        let constant = BatchConstant::random(&mut self.rng);
        let tree = self.build_batch_tree(prev_size, self.tree_size(), constant)?;
        let sth = self.sign_head(now, self.next_index, tree.snapshot());
        if let Some(store) = &mut self.store {
            store.append_sth(&sth)?;
        }
        self.next_index += 1;
        self.sth_history.push(sth.clone());
        Ok(sth)
    }

    /// Build the wild-card tree over the entry slice `[from, to)`.
    pub fn build_batch_tree(
        &self,
        from: u64,
        to: u64,
        constant: BatchConstant,
    ) -> Result<WildTree, LogError> {
        let slice = self.entry_slice(from, to)?;
        let mut grouped: HashMap<SubjectName, Vec<Vec<u8>>> = HashMap::new();
        for e in slice {
            grouped
                .entry(e.subject.clone())
                .or_default()
                .push(e.blob.clone());
        }
        Ok(WildTree::build(constant, grouped)?)
    }

    fn sign_head(&self, now: u64, index: u64, snapshot: Snapshot) -> SignedTreeHead {
        sign_head_with_key(
            &self.signing_key,
            self.tree_size(),
            now,
            rfc6962::root(&self.leaf_hashes),
            standard_extensions(index, &snapshot),
        )
    }

    pub fn latest_sth(&self) -> Option<&SignedTreeHead> {
        self.sth_history.last()
    }

    pub fn sth_count(&self) -> u64 {
        self.sth_history.len() as u64
    }

    pub fn sth_at(&self, index: u64) -> Result<&SignedTreeHead, LogError> {
        self.sth_history
            .get(index as usize)
            .ok_or_else(|| LogError::Range(format!("no sth with index {index}")))
    }

    fn entry_slice(&self, from: u64, to: u64) -> Result<&[LogEntry], LogError> {
        if from > to || to > self.tree_size() {
            return Err(LogError::Range(format!(
                "entry range [{from}, {to}) outside log of size {}",
                self.tree_size()
            )));
        }
        Ok(&self.entries[from as usize..to as usize])
    }

    /// The contiguous entry slice `[from, to)`.
    pub fn get_entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, LogError> {
        Ok(self.entry_slice(from, to)?.to_vec())
    }

    /// Main-tree consistency proof between two historical sizes.
    pub fn consistency_proof(&self, first: u64, second: u64) -> Result<Vec<Digest>, LogError> {
        if first == 0 || first > second || second > self.tree_size() {
            return Err(LogError::Range(format!(
                "consistency range ({first}, {second}) invalid for size {}",
                self.tree_size()
            )));
        }
        Ok(rfc6962::consistency_proof(
            &self.leaf_hashes[..second as usize],
            first as usize,
        ))
    }

    /// Main-tree inclusion proof for entry `seq` in the tree of `size`.
    pub fn inclusion_proof(&self, seq: u64, size: u64) -> Result<Vec<Digest>, LogError> {
        if seq >= size || size > self.tree_size() {
            return Err(LogError::Range(format!(
                "inclusion query (seq {seq}, size {size}) invalid for size {}",
                self.tree_size()
            )));
        }
        Ok(rfc6962::inclusion_proof(
            &self.leaf_hashes[..size as usize],
            seq as usize,
        ))
    }
}
