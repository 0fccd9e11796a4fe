//! Verifiable light-weight monitoring for Certificate Transparency logs.
//!
//! Each batch of newly logged certificates is committed to a static
//! Merkle tree ordered on reversed subject names, and the resulting
//! snapshot is signed by the log inside an STH extension. An untrusted
//! notifier can then serve wild-card certificate notifications — for
//! queries like `*.example.com` — that the subject verifies for both
//! correctness and completeness: the matched certificates are in the
//! batch, and nothing matching was withheld.
//!
//! The crate provides every role in that protocol:
//!
//! * [`hashcore`] — domain-separated hashing with per-batch constants
//! * [`omega`] — name normalization, the reversed-name ordering, and
//!   wild-card range resolution
//! * [`wtree`] — the per-batch wild-card tree: build, prove, verify, and
//!   the canonical proof encodings
//! * [`rfc6962`] — the standard append-only main tree
//! * [`logsim`] — a minimal log issuing signed heads with `lwm` and
//!   `index` extensions
//! * [`notifier`] — batch rebuilding and notification serving
//! * [`subject`] — the subject-side verifier and its evidence journal
//! * [`monitor`] — the decoupled full-audit function
//! * [`evidence`] — self-contained, third-party-checkable misbehavior
//!   records
//! * [`api`] / [`http`] — role interfaces, JSON wire types, and the HTTP
//!   servers and clients
//! * [`corpus`], [`bench`], [`demo`] — name corpora, the measurement
//!   harness, and the end-to-end simulation
//!
//! The `examples/` directory walks through each capability; the `lwm`
//! binary wires them into a command line.

pub mod api;
pub mod bench;
pub mod corpus;
pub mod demo;
pub mod evidence;
pub mod hashcore;
pub mod http;
pub mod logsim;
pub mod monitor;
pub mod notifier;
pub mod omega;
pub mod rfc6962;
pub mod subject;
pub mod wtree;

pub use hashcore::{BatchConstant, Digest};
pub use omega::{SubjectName, WildcardQuery};
pub use wtree::{Snapshot, WildTree, WildcardProof};
