//! End-to-end protocol simulation.
//!
//! Wires an in-process log, a notifier, a monitor, and several subjects
//! together on a simulated clock, feeds a name corpus through the log,
//! and reports every piece of evidence any party produced. Fault
//! injection covers the interesting misbehavior classes:
//!
//! * `skip-notification` — the notifier withholds one head's notification
//! * `omit-match` — the notifier drops a matched leaf from a proof
//! * `forge-snapshot` — the log signs a garbage wild-card root
//! * `omit-from-lwm` — the log omits a certificate from the wild-card
//!   tree while keeping it in the main tree; the notifier colludes
//! * `replay-index` — the log reuses an already-issued index
//! * `stale-sth` — the log signs a head with a long-expired timestamp
//!
//! A configured restart drops the log and notifier mid-run and reopens
//! them from their stores, exercising crash recovery.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use ed25519_dalek::SigningKey;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::api::{ApiError, InProcessLog, LogReader, NotificationSource, SubscriptionInfo};
use crate::corpus;
use crate::evidence::{Evidence, EvidenceKind};
use crate::hashcore::{sha256, Digest};
use crate::logsim::{
    sign_head_with_key, standard_extensions, LogEntry, LogError, LogState, SignedTreeHead,
};
use crate::monitor::{AuditVerdict, Monitor};
use crate::notifier::{Notification, Notifier, NotifierConfig, NotifierError};
use crate::omega::{SubjectName, WildcardQuery};
use crate::subject::{SubjectConfig, SubjectState, Verdict};
use crate::wtree::{Snapshot, WildTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultClass {
    SkipNotification,
    OmitMatch,
    ForgeSnapshot,
    OmitFromLwm,
    ReplayIndex,
    StaleSth,
}

impl FaultClass {
    pub const ALL: [FaultClass; 6] = [
        FaultClass::SkipNotification,
        FaultClass::OmitMatch,
        FaultClass::ForgeSnapshot,
        FaultClass::OmitFromLwm,
        FaultClass::ReplayIndex,
        FaultClass::StaleSth,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FaultClass::SkipNotification => "skip-notification",
            FaultClass::OmitMatch => "omit-match",
            FaultClass::ForgeSnapshot => "forge-snapshot",
            FaultClass::OmitFromLwm => "omit-from-lwm",
            FaultClass::ReplayIndex => "replay-index",
            FaultClass::StaleSth => "stale-sth",
        }
    }

    /// The evidence kind this class must produce somewhere in the system.
    pub fn expected_kind(&self) -> EvidenceKind {
        match self {
            FaultClass::SkipNotification => EvidenceKind::IndexGap,
            FaultClass::OmitMatch => EvidenceKind::ProofInvalid,
            FaultClass::ForgeSnapshot => EvidenceKind::SnapshotMismatch,
            FaultClass::OmitFromLwm => EvidenceKind::SnapshotMismatch,
            FaultClass::ReplayIndex => EvidenceKind::IndexReplay,
            FaultClass::StaleSth => EvidenceKind::StaleTimestamp,
        }
    }
}

impl FromStr for FaultClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        FaultClass::ALL
            .iter()
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = FaultClass::ALL.iter().map(|f| f.name()).collect();
                format!("unknown fault class {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub intervals: u32,
    pub subjects: usize,
    /// Extra random submissions per interval, beyond the one guaranteed
    /// match per subject.
    pub submissions_per_interval: usize,
    pub interval_ms: u64,
    pub seed: u64,
    pub fault: Option<FaultClass>,
    /// Interval (equals head position) at which the fault starts.
    pub fault_interval: u32,
    pub log_store: Option<PathBuf>,
    pub notifier_store: Option<PathBuf>,
    /// Kill and reopen log and notifier before this interval (requires
    /// the stores to be set).
    pub restart_at: Option<u32>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            intervals: 10,
            subjects: 3,
            submissions_per_interval: 5,
            interval_ms: 3_600_000,
            seed: 1,
            fault: None,
            fault_interval: 1,
            log_store: None,
            notifier_store: None,
            restart_at: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("log error: {0}")]
    Log(#[from] LogError),
    #[error("notifier error: {0}")]
    Notifier(#[from] NotifierError),
    #[error("api error: {0}")]
    Api(#[from] ApiError),
    #[error("bad demo config: {0}")]
    Config(String),
}

/// Everything a run produced, for assertions and reporting.
#[derive(Debug)]
pub struct DemoReport {
    pub intervals: u32,
    pub entries_submitted: usize,
    pub queries: Vec<String>,
    pub accepted: Vec<Vec<(String, Vec<u8>)>>,
    pub expected: Vec<Vec<(String, Vec<u8>)>>,
    pub subject_evidence: Vec<Vec<Evidence>>,
    pub notifier_evidence: Vec<Evidence>,
    pub monitor_evidence: Vec<Evidence>,
    pub verdicts: Vec<AuditVerdict>,
}

impl DemoReport {
    pub fn total_evidence(&self) -> usize {
        self.subject_evidence.iter().map(Vec::len).sum::<usize>()
            + self.notifier_evidence.len()
            + self.monitor_evidence.len()
    }

    pub fn evidence_kinds(&self) -> BTreeSet<EvidenceKind> {
        self.subject_evidence
            .iter()
            .flatten()
            .chain(&self.notifier_evidence)
            .chain(&self.monitor_evidence)
            .map(|e| e.kind)
            .collect()
    }

    /// Whether every subject's accepted certificate multiset equals the
    /// filter of all submitted entries.
    pub fn oracle_matches(&self) -> bool {
        self.accepted
            .iter()
            .zip(&self.expected)
            .all(|(got, want)| {
                let mut got = got.clone();
                let mut want = want.clone();
                got.sort();
                want.sort();
                got == want
            })
    }

    pub fn summary(&self) -> String {
        let kinds: Vec<String> = self.evidence_kinds().iter().map(|k| k.to_string()).collect();
        let failed = self.verdicts.iter().filter(|v| !v.ok).count();
        format!(
            "intervals: {}\nentries: {}\nsubjects: {}\naccepted sets match oracle: {}\n\
             evidence records: {} ({})\nfailed audit verdicts: {}/{}",
            self.intervals,
            self.entries_submitted,
            self.queries.len(),
            self.oracle_matches(),
            self.total_evidence(),
            if kinds.is_empty() {
                "none".to_string()
            } else {
                kinds.join(", ")
            },
            failed,
            self.verdicts.len(),
        )
    }
}

/// A log view re-signing selected heads; models log-side misbehavior
/// while the underlying log stays honest.
struct ForgedLogView {
    inner: InProcessLog,
    key: SigningKey,
    mode: FaultClass,
    from_position: u64,
    /// Hide the omitted entries from `entries` responses too (the view
    /// handed to a colluding notifier).
    filter_entries: bool,
}

impl ForgedLogView {
    /// The omitted entry for a forged batch is its last one.
    fn omitted_seq(&self, sth: &SignedTreeHead, batch_size: u64) -> Option<u64> {
        if batch_size == 0 {
            return None;
        }
        Some(sth.tree_size - 1)
    }

    fn forge(&self, position: u64, sth: SignedTreeHead) -> Result<SignedTreeHead, ApiError> {
        if position < self.from_position {
            return Ok(sth);
        }
        let snapshot = sth
            .snapshot()
            .ok_or_else(|| ApiError::Decode("honest head lacks snapshot".into()))?;
        let index = sth
            .index()
            .ok_or_else(|| ApiError::Decode("honest head lacks index".into()))?;
        let forged = match self.mode {
            FaultClass::ForgeSnapshot => {
                let fake = Snapshot {
                    root: sha256(format!("forged-root-{position}").as_bytes()),
                    ..snapshot
                };
                sign_head_with_key(
                    &self.key,
                    sth.tree_size,
                    sth.timestamp,
                    sth.main_root,
                    standard_extensions(index, &fake),
                )
            }
            FaultClass::OmitFromLwm => {
                let Some(omit) = self.omitted_seq(&sth, snapshot.batch_size) else {
                    return Ok(sth);
                };
                let from = sth.tree_size - snapshot.batch_size;
                let entries = self.inner.entries(from, sth.tree_size)?;
                let mut grouped: HashMap<SubjectName, Vec<Vec<u8>>> = HashMap::new();
                for e in entries {
                    if e.seq != omit {
                        grouped.entry(e.subject).or_default().push(e.blob);
                    }
                }
                let tree = WildTree::build(snapshot.constant, grouped)
                    .map_err(|e| ApiError::Decode(e.to_string()))?;
                sign_head_with_key(
                    &self.key,
                    sth.tree_size,
                    sth.timestamp,
                    sth.main_root,
                    standard_extensions(index, &tree.snapshot()),
                )
            }
            FaultClass::ReplayIndex => {
                if position != self.from_position || index == 0 {
                    return Ok(sth);
                }
                sign_head_with_key(
                    &self.key,
                    sth.tree_size,
                    sth.timestamp,
                    sth.main_root,
                    standard_extensions(index - 1, &snapshot),
                )
            }
            FaultClass::StaleSth => {
                let stale = sth.timestamp.saturating_sub(26 * 3_600_000);
                sign_head_with_key(
                    &self.key,
                    sth.tree_size,
                    stale,
                    sth.main_root,
                    standard_extensions(index, &snapshot),
                )
            }
            _ => sth,
        };
        Ok(forged)
    }
}

impl LogReader for ForgedLogView {
    fn sth_count(&self) -> Result<u64, ApiError> {
        self.inner.sth_count()
    }

    fn sth_at(&self, position: u64) -> Result<SignedTreeHead, ApiError> {
        let sth = self.inner.sth_at(position)?;
        self.forge(position, sth)
    }

    fn entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, ApiError> {
        let mut entries = self.inner.entries(from, to)?;
        if self.filter_entries && self.mode == FaultClass::OmitFromLwm {
            // Identify whether [from, to) is a forged batch and hide its
            // omitted entry, keeping the colluding notifier consistent
            // with the forged snapshot.
            let count = self.inner.sth_count()?;
            for position in self.from_position..count {
                let sth = self.inner.sth_at(position)?;
                if sth.tree_size == to && to > from {
                    entries.retain(|e| e.seq != to - 1);
                    break;
                }
            }
        }
        Ok(entries)
    }

    fn consistency(&self, first: u64, second: u64) -> Result<Vec<Digest>, ApiError> {
        self.inner.consistency(first, second)
    }
}

/// A notifier view misdelivering notifications (notifier-side faults).
struct FaultyNotifierView {
    inner: Arc<Notifier>,
    skip_position: Option<u64>,
    omit_match_at: Option<u64>,
}

impl FaultyNotifierView {
    fn mutate(&self, mut n: Notification) -> Notification {
        if Some(n.position) == self.omit_match_at && !n.proof.matches.is_empty() {
            n.proof.matches.remove(0);
            if !n.certificates.is_empty() {
                n.certificates.remove(0);
            }
        }
        n
    }
}

impl NotificationSource for FaultyNotifierView {
    fn subscribe(&self, query: &WildcardQuery) -> Result<SubscriptionInfo, ApiError> {
        NotificationSource::subscribe(self.inner.as_ref(), query)
    }

    fn unsubscribe(&self, id: &str) -> Result<(), ApiError> {
        NotificationSource::unsubscribe(self.inner.as_ref(), id)
    }

    fn whats_new(&self, id: &str, since: Option<u64>) -> Result<Vec<Notification>, ApiError> {
        let list = NotificationSource::whats_new(self.inner.as_ref(), id, since)?;
        Ok(list
            .into_iter()
            .filter(|n| Some(n.position) != self.skip_position)
            .map(|n| self.mutate(n))
            .collect())
    }

    fn notification(&self, id: &str, position: u64) -> Result<Notification, ApiError> {
        let n = NotificationSource::notification(self.inner.as_ref(), id, position)?;
        Ok(self.mutate(n))
    }
}

struct SubjectRun {
    state: SubjectState,
    subscription: SubscriptionInfo,
    since: Option<u64>,
    halted: bool,
    accepted: Vec<(String, Vec<u8>)>,
}

/// Run the topology for `config.intervals` simulated intervals.
pub fn run_demo(config: &DemoConfig) -> Result<DemoReport, DemoError> {
    if config.subjects == 0 || config.intervals == 0 {
        return Err(DemoError::Config("need at least one subject and interval".into()));
    }
    if config.restart_at.is_some() && (config.log_store.is_none() || config.notifier_store.is_none())
    {
        return Err(DemoError::Config("restart requires log and notifier stores".into()));
    }
    if config.fault.is_some() && config.log_store.is_some() {
        return Err(DemoError::Config("fault injection runs are in-memory only".into()));
    }
    let mut rng = StdRng::seed_from_u64(config.seed);

    // The log. Fault views need its signing key, so ephemeral logs get a
    // seeded one; persistent logs own their key file.
    let key_seed: [u8; 32] = rng.gen();
    let signing_key = SigningKey::from_bytes(&key_seed);
    let log_state = match &config.log_store {
        Some(dir) => LogState::open(dir, config.interval_ms)?,
        None => LogState::ephemeral(signing_key.clone(), config.interval_ms)
            .with_rng_seed(rng.gen()),
    };
    let public_key = log_state.public_key();
    let log = InProcessLog::new(log_state);

    let fault_position = u64::from(config.fault_interval.max(1));
    let forged_view = |filter_entries: bool| -> Arc<dyn LogReader> {
        match config.fault {
            Some(
                mode @ (FaultClass::ForgeSnapshot
                | FaultClass::OmitFromLwm
                | FaultClass::ReplayIndex
                | FaultClass::StaleSth),
            ) => Arc::new(ForgedLogView {
                inner: log.clone(),
                key: signing_key.clone(),
                mode,
                from_position: fault_position,
                filter_entries,
            }),
            _ => Arc::new(log.clone()),
        }
    };
    let monitor_view = forged_view(false);
    let notifier_log_view = forged_view(config.fault == Some(FaultClass::OmitFromLwm));

    let notifier_config = || NotifierConfig {
        verify_rebuilds: config.fault != Some(FaultClass::OmitFromLwm),
        store_dir: config.notifier_store.clone(),
        ..NotifierConfig::default()
    };
    let mut notifier = Arc::new(Notifier::new(notifier_log_view.clone(), notifier_config())?);
    let mut notifier_evidence_before_restart: Vec<Evidence> = Vec::new();

    let source = |notifier: &Arc<Notifier>| -> Arc<dyn NotificationSource> {
        match config.fault {
            Some(FaultClass::SkipNotification) => Arc::new(FaultyNotifierView {
                inner: notifier.clone(),
                skip_position: Some(fault_position),
                omit_match_at: None,
            }),
            Some(FaultClass::OmitMatch) => Arc::new(FaultyNotifierView {
                inner: notifier.clone(),
                skip_position: None,
                omit_match_at: Some(fault_position),
            }),
            _ => notifier.clone(),
        }
    };

    // Subjects: each watches everything under its own base domain.
    let pool = corpus::synthetic(128, config.seed ^ 0x5eed);
    let mut subjects = Vec::with_capacity(config.subjects);
    let mut bases = Vec::with_capacity(config.subjects);
    {
        let src = source(&notifier);
        for j in 0..config.subjects {
            let base = pool[j % pool.len()].clone();
            let query = WildcardQuery::parse(&format!("*.{}", base.as_str()))
                .expect("pool names form valid queries");
            let subscription = src.subscribe(&query)?;
            subjects.push(SubjectRun {
                state: SubjectState::new(public_key, query, SubjectConfig::default()),
                subscription,
                since: None,
                halted: false,
                accepted: Vec::new(),
            });
            bases.push(base);
        }
    }

    let mut monitor = Monitor::new(public_key);
    let mut verdicts = Vec::new();
    let mut all_entries: Vec<(SubjectName, Vec<u8>)> = Vec::new();
    // Start the simulated clock well past one freshness window so
    // stale-timestamp arithmetic has room below it.
    let mut now: u64 = 1_700_000_000_000;

    for interval in 0..config.intervals {
        if config.restart_at == Some(interval) {
            // Kill and reopen: the log state is replaced in place from its
            // store; the notifier is rebuilt from its store and re-polls.
            let dir = config.log_store.as_ref().expect("checked");
            let fresh = LogState::open(dir, config.interval_ms)?;
            *log.0.write().unwrap() = fresh;
            notifier_evidence_before_restart.extend(notifier.evidence());
            notifier = Arc::new(Notifier::new(notifier_log_view.clone(), notifier_config())?);
        }

        // One guaranteed-relevant certificate per subject, plus noise.
        for (j, base) in bases.iter().enumerate() {
            let name = format!("h{interval}x{j}.{}", base.as_str());
            let blob: Vec<u8> = (0..48).map(|_| rng.gen()).collect();
            log.submit(&name, blob.clone())?;
            all_entries.push((SubjectName::normalize(&name).unwrap(), blob));
        }
        for _ in 0..config.submissions_per_interval {
            let name = pool[rng.gen_range(0..pool.len())].clone();
            let blob: Vec<u8> = (0..48).map(|_| rng.gen()).collect();
            log.submit(name.as_str(), blob.clone())?;
            all_entries.push((name, blob));
        }

        now += config.interval_ms;
        log.issue_sth(now)?;
        notifier.poll(now)?;

        let src = source(&notifier);
        for subject in subjects.iter_mut() {
            if subject.halted {
                continue;
            }
            let list = match src.whats_new(&subject.subscription.id, subject.since) {
                Ok(list) => list,
                Err(_) => continue, // batch unavailable; retry next interval
            };
            for n in &list {
                match subject.state.verify_notification(now, n) {
                    Ok(Verdict::Accepted(matches)) => {
                        for (name, blobs) in matches {
                            for blob in blobs {
                                subject.accepted.push((name.as_str().to_string(), blob));
                            }
                        }
                        subject.since = Some(n.position);
                    }
                    Ok(Verdict::Duplicate) => {
                        subject.since = Some(n.position);
                    }
                    Err(_) => {
                        subject.halted = true;
                        break;
                    }
                }
            }
        }

        verdicts.extend(monitor.run(monitor_view.as_ref(), now)?);
    }

    let expected: Vec<Vec<(String, Vec<u8>)>> = subjects
        .iter()
        .map(|s| {
            all_entries
                .iter()
                .filter(|(name, _)| s.state.query().matches(name))
                .map(|(name, blob)| (name.as_str().to_string(), blob.clone()))
                .collect()
        })
        .collect();

    let mut notifier_evidence = notifier_evidence_before_restart;
    notifier_evidence.extend(notifier.evidence());

    Ok(DemoReport {
        intervals: config.intervals,
        entries_submitted: all_entries.len(),
        queries: subjects
            .iter()
            .map(|s| s.state.query().as_str().to_string())
            .collect(),
        accepted: subjects.iter().map(|s| s.accepted.clone()).collect(),
        expected,
        subject_evidence: subjects
            .iter()
            .map(|s| s.state.evidence().to_vec())
            .collect(),
        notifier_evidence,
        monitor_evidence: monitor.evidence().to_vec(),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(fault: Option<FaultClass>, seed: u64) -> DemoConfig {
        DemoConfig {
            intervals: 4,
            subjects: 2,
            submissions_per_interval: 2,
            seed,
            fault,
            fault_interval: 1,
            ..DemoConfig::default()
        }
    }

    #[test]
    fn honest_run_is_clean_and_matches_oracle() {
        let report = run_demo(&quick(None, 3)).unwrap();
        assert_eq!(report.total_evidence(), 0, "{}", report.summary());
        assert!(report.oracle_matches());
        assert!(report.verdicts.iter().all(|v| v.ok));
        assert_eq!(report.verdicts.len(), 4);
    }

    #[test]
    fn honest_runs_stay_clean_across_seeds() {
        for seed in 0..15 {
            let report = run_demo(&quick(None, seed)).unwrap();
            assert_eq!(report.total_evidence(), 0, "seed {seed}: {}", report.summary());
            assert!(report.oracle_matches(), "seed {seed}");
        }
    }

    #[test]
    fn each_fault_class_produces_its_kind() {
        for fault in FaultClass::ALL {
            let report = run_demo(&quick(Some(fault), 9)).unwrap();
            assert!(
                report.evidence_kinds().contains(&fault.expected_kind()),
                "fault {} produced kinds {:?}",
                fault.name(),
                report.evidence_kinds()
            );
        }
    }

    #[test]
    fn omit_from_lwm_leaves_subjects_unaffected() {
        let report = run_demo(&quick(Some(FaultClass::OmitFromLwm), 5)).unwrap();
        // Subjects never notice; the monitor does.
        assert!(report.subject_evidence.iter().all(|e| e.is_empty()));
        assert!(report
            .monitor_evidence
            .iter()
            .any(|e| e.kind == EvidenceKind::SnapshotMismatch));
    }

    #[test]
    fn restart_run_is_clean() {
        let log_dir = tempfile::tempdir().unwrap();
        let notifier_dir = tempfile::tempdir().unwrap();
        let config = DemoConfig {
            intervals: 6,
            subjects: 2,
            submissions_per_interval: 2,
            seed: 11,
            log_store: Some(log_dir.path().to_path_buf()),
            notifier_store: Some(notifier_dir.path().to_path_buf()),
            restart_at: Some(3),
            ..DemoConfig::default()
        };
        let report = run_demo(&config).unwrap();
        assert_eq!(report.total_evidence(), 0, "{}", report.summary());
        assert!(report.oracle_matches());
    }

    #[test]
    fn config_validation() {
        let bad = DemoConfig {
            restart_at: Some(1),
            ..DemoConfig::default()
        };
        assert!(matches!(run_demo(&bad), Err(DemoError::Config(_))));
    }
}
