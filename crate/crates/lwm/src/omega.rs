//! Subject-name normalization, the Ω ordering on reversed names, and
//! resolution of wild-card queries to contiguous index ranges.
//!
//! Ω sorts names by their character-wise reversal, so every name matching a
//! given suffix pattern occupies one consecutive run of leaves. Reversed
//! names are compared lexicographically with one twist: `.` sorts below
//! every other permitted byte. Plain byte order would put `-` below `.`,
//! letting a name like `foo-example.com` split the run for `*.example.com`
//! (apex included) into two pieces.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest accepted raw input.
pub const MAX_INPUT_LEN: usize = 255;
/// Longest normalized name.
pub const MAX_NAME_LEN: usize = 253;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OmegaError {
    #[error("malformed name: {0}")]
    MalformedName(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
}

/// A normalized subject name: lowercase ASCII, dot-separated nonempty
/// labels of `[a-z0-9-]`, no trailing dot, at most 253 characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectName(String);

impl SubjectName {
    /// Normalize and validate a raw name.
    pub fn normalize(raw: &str) -> Result<Self, OmegaError> {
        if raw.len() > MAX_INPUT_LEN {
            return Err(OmegaError::MalformedName(format!(
                "input longer than {MAX_INPUT_LEN} bytes"
            )));
        }
        if !raw.is_ascii() {
            return Err(OmegaError::MalformedName(
                "non-ASCII input (punycode required)".into(),
            ));
        }
        let mut s = raw.to_ascii_lowercase();
        if s.ends_with('.') {
            s.pop();
        }
        validate_fragment(&s)?;
        Ok(SubjectName(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Character-wise reversal of the normalized name.
    pub fn reverse(&self) -> ReversedName {
        ReversedName(self.0.bytes().rev().collect())
    }
}

impl std::fmt::Display for SubjectName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn validate_fragment(s: &str) -> Result<(), OmegaError> {
    if s.is_empty() {
        return Err(OmegaError::MalformedName("empty name".into()));
    }
    if s.len() > MAX_NAME_LEN {
        return Err(OmegaError::MalformedName(format!(
            "name longer than {MAX_NAME_LEN} bytes"
        )));
    }
    if s.starts_with('.') || s.ends_with('.') {
        return Err(OmegaError::MalformedName("leading or trailing dot".into()));
    }
    for label in s.split('.') {
        if label.is_empty() {
            return Err(OmegaError::MalformedName("empty label".into()));
        }
        for b in label.bytes() {
            if !(b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-') {
                return Err(OmegaError::MalformedName(format!(
                    "illegal character {:?}",
                    b as char
                )));
            }
        }
    }
    Ok(())
}

/// The character-wise reversal of a normalized name; the Ω sort key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReversedName(Vec<u8>);

impl ReversedName {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Reverse back into the normalized name, validating structure. Used
    /// when decoding leaves received from untrusted parties.
    pub fn to_subject_name(&self) -> Result<SubjectName, OmegaError> {
        let s = String::from_utf8(self.0.iter().rev().copied().collect())
            .map_err(|_| OmegaError::MalformedName("non-UTF8 reversed name".into()))?;
        if s.chars().any(|c| c.is_ascii_uppercase()) || s.ends_with('.') {
            return Err(OmegaError::MalformedName("not in normalized form".into()));
        }
        validate_fragment(&s)?;
        Ok(SubjectName(s))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        ReversedName(bytes)
    }

    pub fn starts_with(&self, prefix: &[u8]) -> bool {
        self.0.starts_with(prefix)
    }
}

impl std::fmt::Display for ReversedName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

/// Ω byte order: `.` below everything else, otherwise plain byte value.
#[inline]
fn omega_byte(b: u8) -> u8 {
    if b == b'.' {
        0
    } else {
        b
    }
}

/// Compare two byte strings in Ω order.
pub fn omega_cmp_bytes(a: &[u8], b: &[u8]) -> Ordering {
    let n = a.len().min(b.len());
    for i in 0..n {
        match omega_byte(a[i]).cmp(&omega_byte(b[i])) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

impl PartialOrd for ReversedName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReversedName {
    fn cmp(&self, other: &Self) -> Ordering {
        omega_cmp_bytes(&self.0, &other.0)
    }
}

/// A wild-card query over subject names.
///
/// Three forms are accepted:
/// * `name` — exact match for one name.
/// * `*.suffix` — every name ending in `.suffix`, plus `suffix` itself
///   when `apex_included` is set (the default).
/// * `*fragment` — every name whose reversal starts with the reversed
///   fragment, i.e. raw string-suffix matching (`*sub.example.com` also
///   matches `absub.example.com`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WildcardQuery {
    raw: String,
    form: QueryForm,
    apex_included: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
enum QueryForm {
    Exact,
    Dotted,
    Fragment,
}

impl WildcardQuery {
    /// Parse a query string, including apex matches for `*.X` queries.
    pub fn parse(raw: &str) -> Result<Self, OmegaError> {
        Self::parse_with_apex(raw, true)
    }

    /// Parse a query string with explicit apex behavior for `*.X` queries.
    pub fn parse_with_apex(raw: &str, apex_included: bool) -> Result<Self, OmegaError> {
        if raw.len() > MAX_INPUT_LEN {
            return Err(OmegaError::MalformedName("query too long".into()));
        }
        if !raw.is_ascii() {
            return Err(OmegaError::MalformedName("non-ASCII query".into()));
        }
        let (form, rest) = if let Some(stripped) = raw.strip_prefix("*.") {
            (QueryForm::Dotted, stripped)
        } else if let Some(stripped) = raw.strip_prefix('*') {
            (QueryForm::Fragment, stripped)
        } else {
            (QueryForm::Exact, raw)
        };
        let mut rest = rest.to_ascii_lowercase();
        if rest.ends_with('.') {
            rest.pop();
        }
        validate_fragment(&rest)?;
        let canonical = match form {
            QueryForm::Exact => rest.clone(),
            QueryForm::Dotted => format!("*.{rest}"),
            QueryForm::Fragment => format!("*{rest}"),
        };
        Ok(WildcardQuery {
            raw: canonical,
            form,
            apex_included,
        })
    }

    /// The canonical query string (lowercased, trailing dot stripped).
    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn apex_included(&self) -> bool {
        self.apex_included
    }

    /// The suffix / fragment / exact part, without any `*` or `*.` marker.
    pub fn pattern(&self) -> &str {
        match self.form {
            QueryForm::Exact => &self.raw,
            QueryForm::Dotted => &self.raw[2..],
            QueryForm::Fragment => &self.raw[1..],
        }
    }

    /// The reversed pattern: every matching name's reversal is bounded
    /// below by this key in Ω order.
    pub fn lower_key(&self) -> Vec<u8> {
        let mut key: Vec<u8> = self.pattern().bytes().rev().collect();
        if self.form == QueryForm::Dotted && !self.apex_included {
            key.push(b'.');
        }
        key
    }

    /// Whether a (normalized) name matches this query.
    pub fn matches(&self, name: &SubjectName) -> bool {
        let pat = self.pattern();
        match self.form {
            QueryForm::Exact => name.as_str() == pat,
            QueryForm::Fragment => name.as_str().ends_with(pat),
            QueryForm::Dotted => {
                (self.apex_included && name.as_str() == pat)
                    || name
                        .as_str()
                        .strip_suffix(pat)
                        .is_some_and(|head| head.ends_with('.'))
            }
        }
    }

    /// Whether a reversed name matches, without re-reversing. Equivalent to
    /// `matches` on the corresponding forward name.
    pub fn matches_reversed(&self, rev: &ReversedName) -> bool {
        let pat_rev: Vec<u8> = self.pattern().bytes().rev().collect();
        match self.form {
            QueryForm::Exact => rev.as_bytes() == &pat_rev[..],
            QueryForm::Fragment => rev.starts_with(&pat_rev),
            QueryForm::Dotted => {
                if rev.as_bytes() == &pat_rev[..] {
                    return self.apex_included;
                }
                rev.as_bytes().len() > pat_rev.len()
                    && rev.starts_with(&pat_rev)
                    && rev.as_bytes()[pat_rev.len()] == b'.'
            }
        }
    }
}

impl std::fmt::Display for WildcardQuery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Sort unique names into Ω order. Fails on duplicates.
pub fn omega_sort(names: Vec<SubjectName>) -> Result<Vec<SubjectName>, OmegaError> {
    let mut keyed: Vec<(ReversedName, SubjectName)> =
        names.into_iter().map(|n| (n.reverse(), n)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    for w in keyed.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(OmegaError::DuplicateName(w[0].1.as_str().into()));
        }
    }
    Ok(keyed.into_iter().map(|(_, n)| n).collect())
}

/// Resolve a query against an Ω-sorted batch to the half-open index range
/// `[lo, hi)` of matching names. `lo == hi` (at the insertion point of the
/// query's reversed pattern) means no match.
///
/// Cost is `O(t + k log n)` for `t` matches and pattern length `k`: one
/// binary search for the lower bound, then a forward scan over the matches.
pub fn resolve_range(query: &WildcardQuery, sorted: &[SubjectName]) -> (usize, usize) {
    let lower = query.lower_key();
    let lo = sorted.partition_point(|n| omega_cmp_bytes(n.reverse().as_bytes(), &lower).is_lt());
    let mut hi = lo;
    while hi < sorted.len() && query.matches(&sorted[hi]) {
        hi += 1;
    }
    (lo, hi)
}


#[cfg(test)]
mod tests {
    use super::testutil::{random_name, random_query};
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn name(s: &str) -> SubjectName {
        SubjectName::normalize(s).unwrap()
    }

    #[test]
    fn normalize_basic() {
        assert_eq!(name("Example.COM.").as_str(), "example.com");
        assert_eq!(name("sub.example.com").as_str(), "sub.example.com");
        assert_eq!(name("localhost").as_str(), "localhost");
    }

    #[test]
    fn normalize_rejects_malformed() {
        assert!(SubjectName::normalize("example..com").is_err());
        assert!(SubjectName::normalize("").is_err());
        assert!(SubjectName::normalize(".").is_err());
        assert!(SubjectName::normalize(".example.com").is_err());
        assert!(SubjectName::normalize("exam ple.com").is_err());
        assert!(SubjectName::normalize("exämple.com").is_err());
        assert!(SubjectName::normalize("under_score.com").is_err());
        assert!(SubjectName::normalize(&"a".repeat(300)).is_err());
        assert!(SubjectName::normalize(&format!("{}.com", "a".repeat(252))).is_err());
    }

    #[test]
    fn reverse_known_values() {
        assert_eq!(name("example.org").reverse().to_string(), "gro.elpmaxe");
        assert_eq!(
            name("sub.example.com").reverse().to_string(),
            "moc.elpmaxe.bus"
        );
    }

    #[test]
    fn reverse_is_involution() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let n = random_name(&mut rng);
            assert_eq!(n.reverse().to_subject_name().unwrap(), n);
        }
    }

    #[test]
    fn sort_matches_demo_batch_order() {
        let names = vec![
            name("example.com"),
            name("example.org"),
            name("example.net"),
            name("sub.example.com"),
        ];
        let sorted = omega_sort(names).unwrap();
        let got: Vec<_> = sorted.iter().map(|n| n.as_str()).collect();
        assert_eq!(
            got,
            vec!["example.org", "example.com", "sub.example.com", "example.net"]
        );
    }

    #[test]
    fn sort_singleton() {
        let sorted = omega_sort(vec![name("a.com")]).unwrap();
        assert_eq!(sorted.len(), 1);
    }

    #[test]
    fn sort_rejects_duplicates() {
        let err = omega_sort(vec![name("a.com"), name("a.com")]).unwrap_err();
        assert!(matches!(err, OmegaError::DuplicateName(_)));
    }

    #[test]
    fn sort_agrees_with_naive_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..50 {
            let mut names = Vec::new();
            let mut seen = std::collections::HashSet::new();
            while names.len() < 64 {
                let n = random_name(&mut rng);
                if seen.insert(n.as_str().to_string()) {
                    names.push(n);
                }
            }
            // Independent oracle: sort by reversed string under the same
            // dot-lowest byte order, implemented from scratch.
            let mut expect: Vec<String> = names.iter().map(|n| n.as_str().to_string()).collect();
            expect.sort_by(|a, b| {
                let ra: Vec<u8> = a
                    .bytes()
                    .rev()
                    .map(|c| if c == b'.' { 0 } else { c })
                    .collect();
                let rb: Vec<u8> = b
                    .bytes()
                    .rev()
                    .map(|c| if c == b'.' { 0 } else { c })
                    .collect();
                ra.cmp(&rb)
            });
            let got: Vec<String> = omega_sort(names)
                .unwrap()
                .iter()
                .map(|n| n.as_str().to_string())
                .collect();
            assert_eq!(got, expect);
        }
    }

    fn demo_sorted() -> Vec<SubjectName> {
        omega_sort(vec![
            name("example.com"),
            name("example.org"),
            name("example.net"),
            name("sub.example.com"),
        ])
        .unwrap()
    }

    #[test]
    fn range_single_match_fragment() {
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        assert_eq!(resolve_range(&q, &demo_sorted()), (2, 3));
    }

    #[test]
    fn range_empty() {
        let q = WildcardQuery::parse("*.example.io").unwrap();
        assert_eq!(resolve_range(&q, &demo_sorted()), (3, 3));
    }

    #[test]
    fn range_dotted_with_apex() {
        let q = WildcardQuery::parse("*.example.com").unwrap();
        assert_eq!(resolve_range(&q, &demo_sorted()), (1, 3));
    }

    #[test]
    fn range_dotted_without_apex() {
        let q = WildcardQuery::parse_with_apex("*.example.com", false).unwrap();
        assert_eq!(resolve_range(&q, &demo_sorted()), (2, 3));
    }

    #[test]
    fn range_exact() {
        let q = WildcardQuery::parse("example.net").unwrap();
        assert_eq!(resolve_range(&q, &demo_sorted()), (3, 4));
    }

    #[test]
    fn query_parse_rejects_bad_input() {
        assert!(WildcardQuery::parse("*").is_err());
        assert!(WildcardQuery::parse("*.").is_err());
        assert!(WildcardQuery::parse("**.com").is_err());
        assert!(WildcardQuery::parse("*.exa mple.com").is_err());
    }

    #[test]
    fn query_normalizes_case_and_trailing_dot() {
        let q = WildcardQuery::parse("*.Example.COM.").unwrap();
        assert_eq!(q.as_str(), "*.example.com");
        assert!(q.matches(&name("example.com")));
    }

    #[test]
    fn apex_stays_contiguous_with_hyphenated_neighbor() {
        let sorted = omega_sort(vec![
            name("example.com"),
            name("foo-example.com"),
            name("sub.example.com"),
        ])
        .unwrap();
        let q = WildcardQuery::parse("*.example.com").unwrap();
        let (lo, hi) = resolve_range(&q, &sorted);
        let matched: Vec<_> = sorted[lo..hi].iter().map(|n| n.as_str()).collect();
        assert_eq!(matched, vec!["example.com", "sub.example.com"]);
    }

    #[test]
    fn resolve_range_matches_naive_filter_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..300 {
            let mut set = std::collections::HashSet::new();
            let n = rng.gen_range(1..=256);
            while set.len() < n {
                set.insert(random_name(&mut rng).as_str().to_string());
            }
            let names: Vec<SubjectName> = set.iter().map(|s| name(s)).collect();
            let sorted = omega_sort(names).unwrap();
            for _ in 0..8 {
                let q = random_query(&mut rng, &sorted);
                let (lo, hi) = resolve_range(&q, &sorted);
                // Naive O(n) filter oracle over the unsorted view.
                let expect: std::collections::BTreeSet<&str> = sorted
                    .iter()
                    .filter(|nm| q.matches(nm))
                    .map(|nm| nm.as_str())
                    .collect();
                let got: std::collections::BTreeSet<&str> =
                    sorted[lo..hi].iter().map(|nm| nm.as_str()).collect();
                assert_eq!(got, expect, "query {q} mismatch");
                // Contiguity: no match outside [lo, hi).
                for (i, nm) in sorted.iter().enumerate() {
                    assert_eq!(q.matches(nm), (lo..hi).contains(&i), "query {q} at {i}");
                }
            }
        }
    }

    #[test]
    fn matches_reversed_agrees_with_matches() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..100 {
            let names: Vec<SubjectName> = (0..20).map(|_| random_name(&mut rng)).collect();
            let q = random_query(&mut rng, &names);
            for n in &names {
                assert_eq!(q.matches(n), q.matches_reversed(&n.reverse()));
            }
        }
    }
}
