//! Subject-name corpora: rank-CSV loading and synthetic generation.
//!
//! The CSV format is one `rank,domain` pair per line, most popular first
//! (the Alexa top-sites layout). A batch of size `n` means the `n` most
//! popular names.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::omega::SubjectName;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus is empty")]
    Empty,
    #[error("corpus has only {have} usable names, need {need}")]
    TooSmall { have: usize, need: usize },
}

/// Load a rank-CSV corpus, preserving rank order. Lines that do not parse
/// as `rank,domain` with a normalizable domain are skipped; duplicates
/// keep their best rank.
pub fn load_csv(path: &Path) -> Result<Vec<SubjectName>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let domain = match line.split_once(',') {
            Some((_rank, domain)) => domain.trim(),
            None => continue,
        };
        if let Ok(name) = SubjectName::normalize(domain) {
            if seen.insert(name.as_str().to_string()) {
                names.push(name);
            }
        }
    }
    if names.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(names)
}

pub fn write_csv(path: &Path, names: &[SubjectName]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for (i, n) in names.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, n.as_str()));
    }
    std::fs::write(path, out)?;
    Ok(())
}

const TLDS: [(&str, u32); 7] = [
    ("com", 50),
    ("net", 12),
    ("org", 12),
    ("io", 8),
    ("de", 7),
    ("se", 6),
    ("co.uk", 5),
];

/// Deterministic synthetic corpus of `n` unique plausible domains, about
/// half of them under `.com` so whole-TLD queries stay meaningful.
pub fn synthetic(n: usize, seed: u64) -> Vec<SubjectName> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    let total: u32 = TLDS.iter().map(|(_, w)| w).sum();
    while names.len() < n {
        let mut word = String::new();
        let len = rng.gen_range(3..=11);
        for i in 0..len {
            let c = rng.gen_range(0u32..40);
            let ch = match c {
                0..=25 => (b'a' + c as u8) as char,
                26..=33 => (b'0' + (c - 26) as u8) as char,
                _ if i > 0 && i + 1 < len => '-',
                _ => 'x',
            };
            word.push(ch);
        }
        let mut roll = rng.gen_range(0..total);
        let mut tld = TLDS[0].0;
        for (t, w) in TLDS {
            if roll < w {
                tld = t;
                break;
            }
            roll -= w;
        }
        let name = match rng.gen_range(0..10) {
            0 => format!("www.{word}.{tld}"),
            1 => format!("mail.{word}.{tld}"),
            _ => format!("{word}.{tld}"),
        };
        if seen.insert(name.clone()) {
            names.push(SubjectName::normalize(&name).expect("synthetic names are valid"));
        }
    }
    names
}

/// Take the `n` most popular names, failing when the corpus is too small.
pub fn top(names: &[SubjectName], n: usize) -> Result<&[SubjectName], CorpusError> {
    if names.len() < n {
        return Err(CorpusError::TooSmall {
            have: names.len(),
            need: n,
        });
    }
    Ok(&names[..n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_unique_and_com_heavy() {
        let a = synthetic(4096, 7);
        let b = synthetic(4096, 7);
        assert_eq!(a, b);
        let set: HashSet<&str> = a.iter().map(|n| n.as_str()).collect();
        assert_eq!(set.len(), a.len());
        let com = a.iter().filter(|n| n.as_str().ends_with(".com")).count();
        assert!(com > a.len() / 3, "com share too small: {com}/{}", a.len());
        assert_ne!(a, synthetic(4096, 8));
    }

    #[test]
    fn csv_round_trip_preserves_rank_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("top.csv");
        let names = synthetic(100, 3);
        write_csv(&path, &names).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, names);
    }

    #[test]
    fn csv_skips_junk_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("messy.csv");
        std::fs::write(
            &path,
            "1,example.com\nnot-a-line\n2,bad domain!\n3,example.com\n4,other.org\n",
        )
        .unwrap();
        let names = load_csv(&path).unwrap();
        let got: Vec<&str> = names.iter().map(|n| n.as_str()).collect();
        assert_eq!(got, vec!["example.com", "other.org"]);
    }

    #[test]
    fn top_respects_bounds() {
        let names = synthetic(10, 1);
        assert_eq!(top(&names, 10).unwrap().len(), 10);
        assert!(matches!(
            top(&names, 11),
            Err(CorpusError::TooSmall { have: 10, need: 11 })
        ));
    }
}
