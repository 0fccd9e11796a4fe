//! `lwm` — command-line entry point for every protocol role.
//!
//! Subcommands: `log serve`/`log submit`, `notifier serve`,
//! `subject watch|verify|evidence`, `monitor`, `demo`, and `bench`.
//! Serve commands accept a TOML config file; explicit flags win over
//! config values.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use lwm::api::{NotificationJson, NotificationSource};
use lwm::bench::{self, BenchConfig};
use lwm::corpus;
use lwm::demo::{run_demo, DemoConfig, FaultClass};
use lwm::evidence;
use lwm::http::{now_ms, serve_log, serve_notifier, spawn_poller, HttpLogClient, HttpNotifierClient};
use lwm::logsim::LogState;
use lwm::monitor::Monitor;
use lwm::notifier::{Notifier, NotifierConfig};
use lwm::omega::WildcardQuery;
use lwm::subject::{SubjectConfig, SubjectState, Verdict};

use config::ConfigFile;

#[derive(Parser)]
#[command(name = "lwm", version, about = "Verifiable light-weight monitoring for CT logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or talk to a log.
    Log {
        #[command(subcommand)]
        cmd: LogCmd,
    },
    /// Run a notifier.
    Notifier {
        #[command(subcommand)]
        cmd: NotifierCmd,
    },
    /// Subject-side verification.
    Subject {
        #[command(subcommand)]
        cmd: SubjectCmd,
    },
    /// Full-audit a log; exits non-zero on the first failed verdict.
    Monitor(MonitorArgs),
    /// Run the end-to-end simulation.
    Demo(DemoArgs),
    /// Measure snapshot, proof, and verification performance.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum LogCmd {
    /// Serve a persistent log over HTTP, issuing heads on an interval.
    Serve(LogServeArgs),
    /// Submit a certificate to a running log.
    Submit {
        #[arg(long)]
        url: String,
        #[arg(long)]
        subject: String,
        /// Certificate file; a synthetic blob is used when omitted.
        #[arg(long)]
        cert_file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LogServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    addr: Option<String>,
    /// Seconds between signed tree heads.
    #[arg(long)]
    interval_secs: Option<u64>,
}

#[derive(Subcommand)]
enum NotifierCmd {
    Serve(NotifierServeArgs),
}

#[derive(Args)]
struct NotifierServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    log_url: Option<String>,
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    poll_secs: Option<u64>,
    #[arg(long)]
    retention: Option<usize>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Omit certificate payloads from notifications.
    #[arg(long)]
    proofs_only: bool,
    /// Skip auditing rebuilds against the signed snapshots.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Subcommand)]
enum SubjectCmd {
    /// Poll a notifier and verify everything it delivers.
    Watch(WatchArgs),
    /// Verify a single notification file against saved state.
    Verify {
        /// Notification JSON as served by a notifier.
        #[arg(long)]
        notification: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Work with the evidence journal.
    Evidence {
        #[command(subcommand)]
        cmd: EvidenceCmd,
    },
}

#[derive(Args)]
struct WatchArgs {
    #[arg(long)]
    notifier_url: String,
    /// Log base URL; recorded for context, polling goes through the
    /// notifier.
    #[arg(long)]
    log_url: Option<String>,
    #[arg(long)]
    query: Option<String>,
    /// Raw 32-byte Ed25519 log key file (required on first run).
    #[arg(long)]
    pubkey: Option<PathBuf>,
    /// Subject state file; created when missing.
    #[arg(long, default_value = "subject.json")]
    state: PathBuf,
    /// Evidence journal file (length-prefixed records).
    #[arg(long, default_value = "evidence.bin")]
    evidence: PathBuf,
    #[arg(long, default_value_t = 15)]
    poll_secs: u64,
    /// Stop after this many polls (runs forever when omitted).
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Subcommand)]
enum EvidenceCmd {
    /// Print the journal as JSON lines.
    Export {
        #[arg(long, default_value = "evidence.bin")]
        evidence: PathBuf,
    },
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    log_url: String,
    #[arg(long)]
    pubkey: PathBuf,
    #[arg(long, default_value_t = 0)]
    from_index: u64,
    /// Keep polling for new heads instead of exiting when caught up.
    #[arg(long)]
    continuous: bool,
    #[arg(long, default_value_t = 15)]
    poll_secs: u64,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    intervals: Option<u32>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    submissions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fault class to inject (e.g. omit-from-lwm, skip-notification).
    #[arg(long)]
    inject: Option<String>,
    /// Interval at which the fault starts.
    #[arg(long)]
    inject_at: Option<u32>,
}

#[derive(Args)]
struct BenchArgs {
    /// Rank CSV (rank,domain per line, most popular first).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generate a synthetic corpus of this many names instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Comma-separated batch sizes; defaults to 2^10..2^17.
    #[arg(long)]
    sizes: Option<String>,
    /// Also run the largest observed batch (689245 names).
    #[arg(long)]
    extreme: bool,
    #[arg(long, default_value_t = bench::DEFAULT_CERT_BYTES)]
    cert_bytes: usize,
    #[arg(long, default_value_t = 400)]
    iters: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV here (stdout gets the human table either way).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Log { cmd } => match cmd {
            LogCmd::Serve(args) => log_serve(args),
            LogCmd::Submit {
                url,
                subject,
                cert_file,
            } => {
                let blob = match cert_file {
                    Some(p) => std::fs::read(p)?,
                    None => format!("synthetic-cert:{subject}:{}", now_ms()).into_bytes(),
                };
                let seq = HttpLogClient::new(&url).submit(&subject, &blob)?;
                println!("{{\"seq\":{seq}}}");
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Notifier { cmd } => match cmd {
            NotifierCmd::Serve(args) => notifier_serve(args),
        },
        Command::Subject { cmd } => match cmd {
            SubjectCmd::Watch(args) => subject_watch(args),
            SubjectCmd::Verify {
                notification,
                state,
            } => subject_verify(notification, state),
            SubjectCmd::Evidence { cmd } => match cmd {
                EvidenceCmd::Export { evidence } => {
                    let data = std::fs::read(&evidence)?;
                    for record in evidence::import_journal(&data)? {
                        println!("{}", serde_json::to_string(&record)?);
                    }
                    Ok(ExitCode::SUCCESS)
                }
            },
        },
        Command::Monitor(args) => monitor(args),
        Command::Demo(args) => demo(args),
        Command::Bench(args) => bench_cmd(args),
    }
}

fn log_serve(args: LogServeArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let store = args
        .store
        .or_else(|| cfg.path("store"))
        .unwrap_or_else(|| PathBuf::from("lwm-log"));
    let addr = args
        .addr
        .or_else(|| cfg.string("addr"))
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let interval_secs = args
        .interval_secs
        .or_else(|| cfg.u64("interval_secs"))
        .unwrap_or(3600);

    let state = LogState::open(&store, interval_secs * 1000)?;
    println!("log store: {}", store.display());
    println!(
        "public key: {}",
        store.join(lwm::logsim::PUBKEY_FILE).display()
    );
    let state = Arc::new(RwLock::new(state));
    let server = serve_log(state.clone(), &addr)?;
    println!("serving on {}", server.base_url());

    // Issue heads on the configured frequency; the rate limiter makes
    // tighter loops harmless.
    loop {
        match state.write().unwrap().issue_sth(now_ms()) {
            Ok(sth) => println!(
                "issued sth index {:?} tree_size {} at {}",
                sth.index(),
                sth.tree_size,
                sth.timestamp
            ),
            Err(lwm::logsim::LogError::RateLimited { .. }) => {}
            Err(e) => eprintln!("issue failed: {e}"),
        }
        std::thread::sleep(Duration::from_millis((interval_secs * 1000).min(2000)));
    }
}

fn notifier_serve(args: NotifierServeArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let log_url = args
        .log_url
        .or_else(|| cfg.string("log_url"))
        .ok_or("missing --log-url")?;
    let addr = args
        .addr
        .or_else(|| cfg.string("addr"))
        .unwrap_or_else(|| "127.0.0.1:8081".into());
    let poll_secs = args.poll_secs.or_else(|| cfg.u64("poll_secs")).unwrap_or(15);
    let retention = args
        .retention
        .or_else(|| cfg.u64("retention").map(|v| v as usize))
        .unwrap_or(lwm::notifier::DEFAULT_RETENTION);

    let notifier = Arc::new(Notifier::new(
        Arc::new(HttpLogClient::new(&log_url)),
        NotifierConfig {
            retention,
            verify_rebuilds: !args.no_verify,
            proofs_only: args.proofs_only,
            store_dir: args.store.or_else(|| cfg.path("store")),
        },
    )?);
    let server = serve_notifier(notifier.clone(), &addr)?;
    println!(
        "notifier serving on {}, polling {log_url}",
        server.base_url()
    );
    let stop = Arc::new(AtomicBool::new(false));
    let poller = spawn_poller(notifier, Duration::from_secs(poll_secs), stop);
    poller.join().ok();
    Ok(ExitCode::SUCCESS)
}

fn load_pubkey(path: &PathBuf) -> Result<ed25519_dalek::VerifyingKey, Box<dyn std::error::Error>> {
    let bytes = std::fs::read(path)?;
    let arr: [u8; 32] = bytes
        .as_slice()
        .try_into()
        .map_err(|_| format!("{} is not a raw 32-byte key", path.display()))?;
    Ok(ed25519_dalek::VerifyingKey::from_bytes(&arr)?)
}

fn subject_watch(args: WatchArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut state = if args.state.exists() {
        SubjectState::load(&args.state)?
    } else {
        let pubkey = args
            .pubkey
            .as_ref()
            .ok_or("first run needs --pubkey and --query")?;
        let query = args.query.as_deref().ok_or("first run needs --query")?;
        SubjectState::new(
            load_pubkey(pubkey)?,
            WildcardQuery::parse(query)?,
            SubjectConfig::default(),
        )
    };
    match &args.log_url {
        Some(url) => println!(
            "watching {} via notifier {} (log {url})",
            state.query(),
            args.notifier_url
        ),
        None => println!("watching {} via notifier {}", state.query(), args.notifier_url),
    }

    let client = HttpNotifierClient::new(&args.notifier_url);
    let sub = client.subscribe(state.query())?;
    let mut rejected = false;
    let mut rounds = 0u64;
    loop {
        let since = state.expected_next_index().checked_sub(1);
        match client.whats_new(&sub.id, since) {
            Ok(list) => {
                for n in &list {
                    match state.verify_notification(now_ms(), n) {
                        Ok(Verdict::Accepted(matches)) => {
                            println!(
                                "{}",
                                serde_json::json!({
                                    "index": n.sth.index(),
                                    "accepted": true,
                                    "matches": matches
                                        .iter()
                                        .map(|(name, certs)| serde_json::json!({
                                            "name": name.as_str(),
                                            "certificates": certs.len(),
                                        }))
                                        .collect::<Vec<_>>(),
                                })
                            );
                        }
                        Ok(Verdict::Duplicate) => {}
                        Err(rej) => {
                            rejected = true;
                            eprintln!("rejected: {rej}");
                            break;
                        }
                    }
                }
                state.save(&args.state)?;
                std::fs::write(&args.evidence, state.export_evidence())?;
            }
            Err(e) => eprintln!("poll failed: {e}"),
        }
        rounds += 1;
        if rejected || args.iterations.is_some_and(|n| rounds >= n) {
            break;
        }
        std::thread::sleep(Duration::from_secs(args.poll_secs));
    }
    Ok(if rejected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn subject_verify(
    notification: PathBuf,
    state_path: PathBuf,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut state = SubjectState::load(&state_path)?;
    let json: NotificationJson = serde_json::from_slice(&std::fs::read(&notification)?)?;
    let n = lwm::notifier::Notification::try_from(&json)?;
    match state.verify_notification(now_ms(), &n) {
        Ok(Verdict::Accepted(matches)) => {
            state.save(&state_path)?;
            println!(
                "{}",
                serde_json::json!({ "accepted": true, "matches": matches.len() })
            );
            Ok(ExitCode::SUCCESS)
        }
        Ok(Verdict::Duplicate) => {
            println!(
                "{}",
                serde_json::json!({ "accepted": true, "duplicate": true })
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(rej) => {
            let evidence_path = state_path.with_extension("evidence.bin");
            std::fs::write(&evidence_path, state.export_evidence())?;
            println!(
                "{}",
                serde_json::json!({
                    "accepted": false,
                    "kind": rej.kind.to_string(),
                    "reason": rej.reason,
                    "evidence": evidence_path.display().to_string(),
                })
            );
            Ok(ExitCode::FAILURE)
        }
    }
}

fn monitor(args: MonitorArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let key = load_pubkey(&args.pubkey)?;
    let log = HttpLogClient::new(&args.log_url);
    let mut monitor = Monitor::from_position(key, args.from_index);
    loop {
        let verdicts = monitor.run(&log, now_ms())?;
        for v in &verdicts {
            println!("{}", serde_json::to_string(v)?);
            if !v.ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        if !args.continuous {
            return Ok(ExitCode::SUCCESS);
        }
        std::thread::sleep(Duration::from_secs(args.poll_secs));
    }
}

fn demo(args: DemoArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let fault = match args.inject.or_else(|| cfg.string("inject")) {
        Some(name) => Some(name.parse::<FaultClass>()?),
        None => None,
    };
    let config = DemoConfig {
        intervals: args
            .intervals
            .or_else(|| cfg.u64("intervals").map(|v| v as u32))
            .unwrap_or(10),
        subjects: args
            .subjects
            .or_else(|| cfg.u64("subjects").map(|v| v as usize))
            .unwrap_or(3),
        submissions_per_interval: args
            .submissions
            .or_else(|| cfg.u64("submissions").map(|v| v as usize))
            .unwrap_or(5),
        seed: args.seed.or_else(|| cfg.u64("seed")).unwrap_or(1),
        fault,
        fault_interval: args.inject_at.unwrap_or(1),
        ..DemoConfig::default()
    };
    let report = run_demo(&config)?;
    println!("{}", report.summary());
    let ok = match fault {
        None => report.total_evidence() == 0 && report.oracle_matches(),
        Some(f) => report.evidence_kinds().contains(&f.expected_kind()),
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bench_cmd(args: BenchArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let names = match (&args.corpus, args.synthetic) {
        (Some(path), _) => corpus::load_csv(path)?,
        (None, Some(n)) => corpus::synthetic(n, args.seed),
        (None, None) => return Err("corpus missing: pass --corpus FILE or --synthetic N".into()),
    };
    let mut sizes: Vec<usize> = match &args.sizes {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()?,
        None => bench::DEFAULT_SIZES.to_vec(),
    };
    if args.extreme {
        sizes.push(bench::EXTREME_SIZE);
    }
    let config = BenchConfig {
        sizes,
        cert_bytes: args.cert_bytes,
        seed: args.seed,
        proof_iters: args.iters,
    };
    println!(
        "{:>8} {:>10} {:>10} {:>12} {:>10} {:>12} {:>10} {:>12} {:>9}",
        "size",
        "build_ms",
        "mem_us",
        "mem_vf_us",
        "nm_us",
        "nm_vf_us",
        "tld_ms",
        "tld_vf_ms",
        "proof_B"
    );
    let rows = bench::run(&names, &config, |row| {
        println!(
            "{:>8} {:>10.1} {:>10.2} {:>12.2} {:>10.2} {:>12.2} {:>10.1} {:>12.1} {:>9}",
            row.size,
            row.build_ms,
            row.mem_gen_us,
            row.mem_verify_us,
            row.nonmem_gen_us,
            row.nonmem_verify_us,
            row.tld_gen_ms,
            row.tld_verify_ms,
            row.nonmem_proof_bytes
        );
    })?;
    if let Some(out) = args.out {
        std::fs::write(&out, bench::to_csv(&rows))?;
        println!("csv written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}
