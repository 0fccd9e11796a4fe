//! Single-core measurement harness for snapshot construction, proof
//! generation, and proof verification across batch sizes.
//!
//! Batches take the `n` most popular corpus names with synthetic
//! certificates (1500 bytes by default, the average observed size).
//! Three query shapes are timed per batch: a membership query with a
//! single match, a non-membership query under `.com`, and the whole-TLD
//! query `*.com`. Output is a fixed-schema CSV; timings vary, structure
//! does not.

use std::collections::HashMap;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::corpus::{self, CorpusError};
use crate::hashcore::BatchConstant;
use crate::omega::{SubjectName, WildcardQuery};
use crate::wtree::{verify, WildTree, WildcardProof};

pub const DEFAULT_CERT_BYTES: usize = 1500;
/// Desk-scale default sizes: 2^10 .. 2^17.
pub const DEFAULT_SIZES: [usize; 8] = [1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072];
/// The largest batch the reference data set contains, behind a flag.
pub const EXTREME_SIZE: usize = 689_245;

pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub cert_bytes: usize,
    pub seed: u64,
    /// Iterations for microsecond-scale measurements.
    pub proof_iters: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: DEFAULT_SIZES.to_vec(),
            cert_bytes: DEFAULT_CERT_BYTES,
            seed: 42,
            proof_iters: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub size: usize,
    pub build_ms: f64,
    pub mem_gen_us: f64,
    pub mem_verify_us: f64,
    pub nonmem_gen_us: f64,
    pub nonmem_verify_us: f64,
    pub tld_gen_ms: f64,
    pub tld_verify_ms: f64,
    pub tld_matches: usize,
    pub mem_proof_bytes: usize,
    pub nonmem_proof_bytes: usize,
    pub max_path_len: usize,
}

pub const CSV_HEADER: &str = "size,build_ms,mem_gen_us,mem_verify_us,nonmem_gen_us,\
nonmem_verify_us,tld_gen_ms,tld_verify_ms,tld_matches,mem_proof_bytes,nonmem_proof_bytes,\
max_path_len";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{},{}",
            self.size,
            self.build_ms,
            self.mem_gen_us,
            self.mem_verify_us,
            self.nonmem_gen_us,
            self.nonmem_verify_us,
            self.tld_gen_ms,
            self.tld_verify_ms,
            self.tld_matches,
            self.mem_proof_bytes,
            self.nonmem_proof_bytes,
            self.max_path_len
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Certificate blobs for a batch: one synthetic cert per name.
pub fn make_entries(
    names: &[SubjectName],
    cert_bytes: usize,
    seed: u64,
) -> HashMap<SubjectName, Vec<Vec<u8>>> {
    let mut rng = StdRng::seed_from_u64(seed);
    names
        .iter()
        .map(|n| {
            let mut blob = vec![0u8; cert_bytes];
            rng.fill(&mut blob[..]);
            (n.clone(), vec![blob])
        })
        .collect()
}

/// Build a snapshot from an unordered dictionary, timed.
pub fn timed_build(
    constant: BatchConstant,
    entries: HashMap<SubjectName, Vec<Vec<u8>>>,
) -> (WildTree, f64) {
    let start = Instant::now();
    let tree = WildTree::build(constant, entries).expect("bench names are valid");
    let ms = start.elapsed().as_secs_f64() * 1e3;
    (tree, ms)
}

/// Mean microseconds per proof generation over `iters` runs.
pub fn timed_prove_us(tree: &WildTree, query: &WildcardQuery, iters: u32) -> (WildcardProof, f64) {
    let proof = tree.prove(query);
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(tree.prove(std::hint::black_box(query)));
    }
    let us = start.elapsed().as_secs_f64() * 1e6 / f64::from(iters.max(1));
    (proof, us)
}

/// Mean microseconds per verification over `iters` runs.
pub fn timed_verify_us(
    tree: &WildTree,
    query: &WildcardQuery,
    proof: &WildcardProof,
    iters: u32,
) -> f64 {
    let snapshot = tree.snapshot();
    verify(&snapshot, query, proof).expect("honest proof verifies");
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(
            verify(&snapshot, std::hint::black_box(query), std::hint::black_box(proof))
                .expect("honest proof verifies"),
        );
    }
    start.elapsed().as_secs_f64() * 1e6 / f64::from(iters.max(1))
}

/// A membership query that matches exactly one batch name.
pub fn single_match_query(names: &[SubjectName]) -> WildcardQuery {
    let target = &names[names.len() / 3];
    WildcardQuery::parse(&format!("*{}", target.as_str())).expect("valid query")
}

/// A query with no match inside `.com`.
pub fn absent_com_query(seed: u64) -> WildcardQuery {
    WildcardQuery::parse(&format!("*.zz-absent-{seed}.com")).expect("valid query")
}

pub fn whole_tld_query() -> WildcardQuery {
    WildcardQuery::parse("*.com").expect("valid query")
}

/// Run the suite over `sizes`, calling `progress` after each size.
pub fn run(
    names: &[SubjectName],
    config: &BenchConfig,
    mut progress: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>, CorpusError> {
    let mut rows = Vec::with_capacity(config.sizes.len());
    for (i, &size) in config.sizes.iter().enumerate() {
        let batch_names = corpus::top(names, size)?;
        let entries = make_entries(batch_names, config.cert_bytes, config.seed ^ size as u64);
        let constant = BatchConstant({
            let mut c = [0u8; 16];
            let mut rng = StdRng::seed_from_u64(config.seed.wrapping_add(i as u64));
            rng.fill(&mut c);
            c
        });
        let (tree, build_ms) = timed_build(constant, entries);

        let iters = config.proof_iters;
        let mem_q = single_match_query(batch_names);
        let (mem_proof, mem_gen_us) = timed_prove_us(&tree, &mem_q, iters);
        let mem_verify_us = timed_verify_us(&tree, &mem_q, &mem_proof, iters);

        let nonmem_q = absent_com_query(config.seed);
        let (nonmem_proof, nonmem_gen_us) = timed_prove_us(&tree, &nonmem_q, iters);
        assert!(nonmem_proof.matches.is_empty(), "query unexpectedly matched");
        let nonmem_verify_us = timed_verify_us(&tree, &nonmem_q, &nonmem_proof, iters);

        let tld_q = whole_tld_query();
        let start = Instant::now();
        let tld_proof = tree.prove(&tld_q);
        let tld_gen_ms = start.elapsed().as_secs_f64() * 1e3;
        let snapshot = tree.snapshot();
        let start = Instant::now();
        let tld_matches = verify(&snapshot, &tld_q, &tld_proof)
            .expect("honest proof verifies")
            .len();
        let tld_verify_ms = start.elapsed().as_secs_f64() * 1e3;

        let max_path_len = [&mem_proof, &nonmem_proof, &tld_proof]
            .iter()
            .flat_map(|p| {
                [
                    p.left_boundary.as_ref().map_or(0, |b| b.path.siblings.len()),
                    p.right_boundary.as_ref().map_or(0, |b| b.path.siblings.len()),
                ]
            })
            .max()
            .unwrap_or(0);

        let row = BenchRow {
            size,
            build_ms,
            mem_gen_us,
            mem_verify_us,
            nonmem_gen_us,
            nonmem_verify_us,
            tld_gen_ms,
            tld_verify_ms,
            tld_matches,
            mem_proof_bytes: mem_proof.to_bytes().len(),
            nonmem_proof_bytes: nonmem_proof.to_bytes().len(),
            max_path_len,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_produces_fixed_schema() {
        let names = corpus::synthetic(600, 11);
        let config = BenchConfig {
            sizes: vec![64, 512],
            cert_bytes: 64,
            seed: 5,
            proof_iters: 8,
        };
        let mut seen = 0;
        let rows = run(&names, &config, |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(rows.len(), 2);
        let csv = to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), CSV_HEADER.split(',').count());
        // Path bound: at most ceil(log2 n) per boundary path.
        for row in &rows {
            let bound = (row.size as f64).log2().ceil() as usize;
            assert!(row.max_path_len <= bound);
            assert!(row.tld_matches > 0);
        }
    }

    #[test]
    fn corpus_too_small_is_an_error() {
        let names = corpus::synthetic(10, 1);
        let config = BenchConfig {
            sizes: vec![1024],
            cert_bytes: 8,
            seed: 1,
            proof_iters: 1,
        };
        assert!(run(&names, &config, |_| {}).is_err());
    }
}
