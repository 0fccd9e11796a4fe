//! Wild-card proof verification.
//!
//! A proof claims that leaves `[match_lo, match_lo + t)` of the committed
//! batch are exactly the query's matches. Verification checks three things:
//! the boundary leaves straddle the query's range in Ω order, the presented
//! leaves are themselves Ω-ordered and inside the range, and the root
//! recomputed from the contiguous leaf span plus the two boundary audit
//! paths equals the signed snapshot root. Audit paths may overlap the span;
//! overlapping siblings are checked for consistency rather than trusted.

use thiserror::Error;

use crate::hashcore::{empty_hash, node_hash, Digest};
use crate::omega::{omega_cmp_bytes, WildcardQuery};

use super::{LeafValue, Snapshot, WildcardProof};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    /// Boundaries or matches out of Ω order, a boundary inside the query
    /// range, or a claimed match outside it.
    #[error("omega order violation: {0}")]
    OrderViolation(&'static str),
    /// A boundary is absent although the claimed range is not flush with
    /// the corresponding tree edge.
    #[error("missing boundary: {0}")]
    BoundaryMissing(&'static str),
    /// The reconstructed root does not equal the snapshot root, or a
    /// redundant sibling disagrees with a recomputed node.
    #[error("root mismatch: {0}")]
    RootMismatch(&'static str),
    /// Proof tree size differs from the snapshot batch size.
    #[error("tree size {proof} does not match snapshot batch size {snapshot}")]
    SizeMismatch { proof: u64, snapshot: u64 },
    /// Structurally inconsistent proof: bad indices, wrong audit path
    /// arity, or boundaries present where none belong.
    #[error("malformed proof: {0}")]
    MalformedProof(&'static str),
}

pub(super) fn verify(
    snapshot: &Snapshot,
    query: &WildcardQuery,
    proof: &WildcardProof,
) -> Result<Vec<LeafValue>, VerifyError> {
    if proof.tree_size != snapshot.batch_size {
        return Err(VerifyError::SizeMismatch {
            proof: proof.tree_size,
            snapshot: snapshot.batch_size,
        });
    }
    let n = proof.tree_size;
    let t = proof.matches.len() as u64;

    if n == 0 {
        if t != 0 || proof.left_boundary.is_some() || proof.right_boundary.is_some() {
            return Err(VerifyError::MalformedProof("empty tree with content"));
        }
        if empty_hash(&snapshot.constant) != snapshot.root {
            return Err(VerifyError::RootMismatch("empty tree root"));
        }
        return Ok(Vec::new());
    }

    // Index arithmetic: boundaries are present exactly when the range is
    // not flush with the respective tree edge, and their audit paths claim
    // the adjacent leaf positions.
    let match_hi = proof
        .match_lo
        .checked_add(t)
        .filter(|hi| *hi <= n)
        .ok_or(VerifyError::MalformedProof("range exceeds tree size"))?;
    match (&proof.left_boundary, proof.match_lo) {
        (None, 0) => {}
        (None, _) => return Err(VerifyError::BoundaryMissing("left")),
        (Some(_), 0) => return Err(VerifyError::MalformedProof("left boundary at tree edge")),
        (Some(b), lo) => {
            if b.path.leaf_index != lo - 1 {
                return Err(VerifyError::MalformedProof("left boundary index"));
            }
        }
    }
    match (&proof.right_boundary, match_hi) {
        (None, hi) if hi == n => {}
        (None, _) => return Err(VerifyError::BoundaryMissing("right")),
        (Some(_), hi) if hi == n => {
            return Err(VerifyError::MalformedProof("right boundary at tree edge"))
        }
        (Some(b), hi) => {
            if b.path.leaf_index != hi {
                return Err(VerifyError::MalformedProof("right boundary index"));
            }
        }
    }

    // Ω-order checks. Every possible match's reversed name is bounded
    // below by the query's lower key; the left boundary must sort strictly
    // below that key and the right boundary strictly above every possible
    // match (which, given it does not match itself, reduces to sorting
    // above the lower key).
    let lower = query.lower_key();
    for m in &proof.matches {
        if !query.matches(&m.name) {
            return Err(VerifyError::OrderViolation("match outside query range"));
        }
    }
    for pair in proof.matches.windows(2) {
        if omega_cmp_bytes(
            pair[0].name.reverse().as_bytes(),
            pair[1].name.reverse().as_bytes(),
        )
        .is_ge()
        {
            return Err(VerifyError::OrderViolation("matches not strictly increasing"));
        }
    }
    if let Some(b) = &proof.left_boundary {
        if omega_cmp_bytes(b.leaf.name.reverse().as_bytes(), &lower).is_ge() {
            return Err(VerifyError::OrderViolation("left boundary not below range"));
        }
    }
    if let Some(b) = &proof.right_boundary {
        if query.matches(&b.leaf.name) {
            return Err(VerifyError::OrderViolation("right boundary matches query"));
        }
        if omega_cmp_bytes(b.leaf.name.reverse().as_bytes(), &lower).is_le() {
            return Err(VerifyError::OrderViolation("right boundary not above range"));
        }
    }

    // Root reconstruction over the contiguous span of presented leaves.
    let span_start = proof.match_lo - u64::from(proof.left_boundary.is_some());
    let mut span_hashes = Vec::with_capacity(proof.matches.len() + 2);
    if let Some(b) = &proof.left_boundary {
        span_hashes.push(b.leaf.hash(&snapshot.constant));
    }
    for m in &proof.matches {
        span_hashes.push(m.hash(&snapshot.constant));
    }
    if let Some(b) = &proof.right_boundary {
        span_hashes.push(b.leaf.hash(&snapshot.constant));
    }

    let left_sibs = proof
        .left_boundary
        .as_ref()
        .map(|b| b.path.siblings.as_slice());
    let right_sibs = proof
        .right_boundary
        .as_ref()
        .map(|b| b.path.siblings.as_slice());
    let root = reconstruct_root(n, span_start, span_hashes, left_sibs, right_sibs)?;
    if root != snapshot.root {
        return Err(VerifyError::RootMismatch("reconstructed root differs"));
    }
    Ok(proof.matches.clone())
}

/// Rebuild the root from a contiguous run of leaf hashes starting at
/// `span_start` in a tree of `tree_size` leaves, merging in the boundary
/// audit paths level by level.
///
/// At each level the span covers nodes `[s, e)` of a level of length `len`.
/// An audit path contributes one sibling per level where its leaf's
/// ancestor has one; siblings falling inside the span are checked against
/// the recomputed nodes, siblings outside extend the span for the merge.
fn reconstruct_root(
    tree_size: u64,
    span_start: u64,
    span_hashes: Vec<Digest>,
    left_sibs: Option<&[Digest]>,
    right_sibs: Option<&[Digest]>,
) -> Result<Digest, VerifyError> {
    debug_assert!(tree_size > 0 && !span_hashes.is_empty());
    let mut s = span_start;
    let mut e = span_start + span_hashes.len() as u64;
    let mut len = tree_size;
    let mut window = span_hashes;
    let mut left = left_sibs.unwrap_or(&[]).iter();
    let mut right = right_sibs.unwrap_or(&[]).iter();
    let left_present = left_sibs.is_some();
    let right_present = right_sibs.is_some();

    while len > 1 {
        // Nodes adjacent to the span supplied by the audit paths at this
        // level: `s - 1` when the span starts at an odd index, `e` when the
        // span's last node is a left child with an in-level sibling.
        let mut outside_left: Option<Digest> = None;
        let mut outside_right: Option<Digest> = None;
        let take = |h: Digest,
                        at: u64,
                        window: &[Digest],
                        outside_left: &mut Option<Digest>,
                        outside_right: &mut Option<Digest>|
         -> Result<(), VerifyError> {
            if at >= s && at < e {
                if window[(at - s) as usize] != h {
                    return Err(VerifyError::RootMismatch("redundant sibling disagrees"));
                }
            } else if at + 1 == s {
                match outside_left {
                    Some(prev) if *prev != h => {
                        return Err(VerifyError::RootMismatch("audit paths disagree"))
                    }
                    _ => *outside_left = Some(h),
                }
            } else if at == e {
                match outside_right {
                    Some(prev) if *prev != h => {
                        return Err(VerifyError::RootMismatch("audit paths disagree"))
                    }
                    _ => *outside_right = Some(h),
                }
            } else {
                return Err(VerifyError::MalformedProof("sibling outside span reach"));
            }
            Ok(())
        };

        if left_present {
            let sib = s ^ 1;
            if sib < len {
                let h = *left
                    .next()
                    .ok_or(VerifyError::MalformedProof("left path too short"))?;
                take(h, sib, &window, &mut outside_left, &mut outside_right)?;
            }
        }
        if right_present {
            let sib = (e - 1) ^ 1;
            if sib < len {
                let h = *right
                    .next()
                    .ok_or(VerifyError::MalformedProof("right path too short"))?;
                take(h, sib, &window, &mut outside_left, &mut outside_right)?;
            }
        }

        let first = s & !1;
        let mut above = Vec::with_capacity(((e - first) as usize).div_ceil(2));
        let fetch = |at: u64| -> Result<Digest, VerifyError> {
            if at >= s && at < e {
                Ok(window[(at - s) as usize])
            } else if at + 1 == s {
                outside_left.ok_or(VerifyError::MalformedProof("missing left sibling"))
            } else {
                debug_assert_eq!(at, e);
                outside_right.ok_or(VerifyError::MalformedProof("missing right sibling"))
            }
        };
        let mut i = first;
        while i < e {
            let a = fetch(i)?;
            if i + 1 < len {
                above.push(node_hash(&a, &fetch(i + 1)?));
            } else {
                above.push(a);
            }
            i += 2;
        }

        window = above;
        s >>= 1;
        e = ((e - 1) >> 1) + 1;
        len = len.div_ceil(2);
    }

    if left.next().is_some() {
        return Err(VerifyError::MalformedProof("left path too long"));
    }
    if right.next().is_some() {
        return Err(VerifyError::MalformedProof("right path too long"));
    }
    debug_assert_eq!(window.len(), 1);
    Ok(window[0])
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{verify, Boundary, WildTree, WildcardProof};
    use super::*;
    use crate::hashcore::BatchConstant;
    use crate::omega::testutil::random_query;
    use crate::omega::SubjectName;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;
    use std::collections::HashMap;

    #[test]
    fn demo_proof_verifies_and_returns_match() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let proof = tree.prove(&q);
        let got = verify(&tree.snapshot(), &q, &proof).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].name.as_str(), "sub.example.com");
    }

    #[test]
    fn demo_proof_with_dropped_match_fails() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let mut proof = tree.prove(&q);
        proof.matches.clear();
        let err = verify(&tree.snapshot(), &q, &proof).unwrap_err();
        assert!(matches!(
            err,
            VerifyError::RootMismatch(_)
                | VerifyError::OrderViolation(_)
                | VerifyError::MalformedProof(_)
        ));
    }

    #[test]
    fn empty_tree_proof() {
        let c = demo_constant();
        let tree = WildTree::build(c, HashMap::new()).unwrap();
        let q = WildcardQuery::parse("*.example.com").unwrap();
        let proof = tree.prove(&q);
        assert_eq!(proof.tree_size, 0);
        let got = verify(&tree.snapshot(), &q, &proof).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn single_leaf_tree_membership_and_absence() {
        let entries: HashMap<SubjectName, Vec<Vec<u8>>> = [(
            SubjectName::normalize("only.example.com").unwrap(),
            vec![b"cert".to_vec()],
        )]
        .into_iter()
        .collect();
        let tree = WildTree::build(demo_constant(), entries).unwrap();
        let snap = tree.snapshot();

        let q = WildcardQuery::parse("*.example.com").unwrap();
        let proof = tree.prove(&q);
        assert!(proof.left_boundary.is_none() && proof.right_boundary.is_none());
        assert_eq!(verify(&snap, &q, &proof).unwrap().len(), 1);

        let q = WildcardQuery::parse("*.absent.org").unwrap();
        let proof = tree.prove(&q);
        assert_eq!(proof.matches.len(), 0);
        assert_eq!(verify(&snap, &q, &proof).unwrap().len(), 0);
    }

    #[test]
    fn constant_binding() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let proof = tree.prove(&q);
        let mut snap = tree.snapshot();
        snap.constant = BatchConstant([0xAA; 16]);
        let err = verify(&snap, &q, &proof).unwrap_err();
        assert!(matches!(err, VerifyError::RootMismatch(_)));
    }

    #[test]
    fn size_mismatch_detected() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let mut proof = tree.prove(&q);
        proof.tree_size = 5;
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn round_trip_matches_filter_oracle_on_random_trees() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..120 {
            let n = rng.gen_range(1..=64usize);
            let leaves = random_leaves(&mut rng, n);
            let tree = WildTree::from_sorted_leaves(demo_constant(), leaves.clone());
            let snap = tree.snapshot();
            let names: Vec<SubjectName> = leaves.iter().map(|l| l.name.clone()).collect();
            for _ in 0..6 {
                let q = random_query(&mut rng, &names);
                let proof = tree.prove(&q);
                // Proof components equal a from-scratch path oracle.
                if let Some(b) = &proof.left_boundary {
                    let idx = (proof.match_lo - 1) as usize;
                    assert_eq!(b.leaf, leaves[idx]);
                    assert_eq!(
                        b.path.siblings,
                        naive_path(&demo_constant(), &leaves, idx)
                    );
                }
                if let Some(b) = &proof.right_boundary {
                    let idx = (proof.match_lo as usize) + proof.matches.len();
                    assert_eq!(b.leaf, leaves[idx]);
                    assert_eq!(
                        b.path.siblings,
                        naive_path(&demo_constant(), &leaves, idx)
                    );
                }
                let got = verify(&snap, &q, &proof).unwrap_or_else(|e| {
                    panic!("honest proof rejected: {e} (query {q}, n {n})")
                });
                let got: BTreeSet<String> =
                    got.iter().map(|l| l.name.as_str().to_string()).collect();
                let expect: BTreeSet<String> = names
                    .iter()
                    .filter(|nm| q.matches(nm))
                    .map(|nm| nm.as_str().to_string())
                    .collect();
                assert_eq!(got, expect, "query {q}");
            }
        }
    }

    #[test]
    fn sibling_count_is_bounded() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..60 {
            let n = rng.gen_range(1..=128usize);
            let leaves = random_leaves(&mut rng, n);
            let tree = WildTree::from_sorted_leaves(demo_constant(), leaves);
            let names: Vec<SubjectName> =
                tree.leaves().iter().map(|l| l.name.clone()).collect();
            let q = random_query(&mut rng, &names);
            let proof = tree.prove(&q);
            let bound = 2 * (tree.size() as f64).log2().ceil() as usize;
            assert!(
                proof.sibling_count() <= bound.max(0),
                "n={n} siblings={} bound={bound}",
                proof.sibling_count()
            );
        }
    }

    /// Structured single-field mutations must never verify with a wrong
    /// match set. (The exhaustive byte-level harness lives in the
    /// acceptance suite.)
    #[test]
    fn structured_mutations_never_accepted_with_wrong_matches() {
        let mut rng = StdRng::seed_from_u64(47);
        let mut tried = 0u32;
        for _ in 0..40 {
            let n = rng.gen_range(2..=32usize);
            let leaves = random_leaves(&mut rng, n);
            let tree = WildTree::from_sorted_leaves(demo_constant(), leaves.clone());
            let snap = tree.snapshot();
            let names: Vec<SubjectName> = leaves.iter().map(|l| l.name.clone()).collect();
            let q = random_query(&mut rng, &names);
            let honest = tree.prove(&q);
            let honest_set: BTreeSet<String> = honest
                .matches
                .iter()
                .map(|l| l.name.as_str().to_string())
                .collect();

            for variant in 0..7 {
                let mut p = honest.clone();
                match variant {
                    0 if !p.matches.is_empty() => {
                        p.matches.remove(rng.gen_range(0..p.matches.len()));
                    }
                    1 => {
                        // Claim an extra leaf copied from elsewhere.
                        p.matches.push(leaves[rng.gen_range(0..leaves.len())].clone());
                    }
                    2 if p.matches.len() >= 2 => {
                        p.matches.swap(0, 1);
                    }
                    3 => {
                        if let Some(b) = &mut p.left_boundary {
                            b.path.siblings[0].0[0] ^= 1;
                        } else if let Some(b) = &mut p.right_boundary {
                            b.path.siblings[0].0[0] ^= 1;
                        } else {
                            continue;
                        }
                    }
                    4 => {
                        if let Some(b) = &mut p.left_boundary {
                            b.leaf.cert_list_hash.0[0] ^= 1;
                        } else {
                            continue;
                        }
                    }
                    5 => {
                        p.tree_size = p.tree_size.wrapping_add(1);
                    }
                    6 => {
                        p.match_lo = p.match_lo.wrapping_add(1);
                    }
                    _ => continue,
                }
                tried += 1;
                if let Ok(got) = verify(&snap, &q, &p) {
                    let got: BTreeSet<String> =
                        got.iter().map(|l| l.name.as_str().to_string()).collect();
                    assert_eq!(got, honest_set, "mutation variant {variant} accepted with wrong set");
                }
            }
        }
        assert!(tried > 100);
    }

    #[test]
    fn boundary_missing_reported() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let mut proof = tree.prove(&q);
        proof.left_boundary = None;
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::BoundaryMissing(_))
        ));
    }

    #[test]
    fn redundant_sibling_is_checked() {
        // In the demo proof the left path's second sibling (h23) overlaps
        // the recomputed span; corrupting it must be rejected even though
        // reconstruction does not need it.
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let mut proof = tree.prove(&q);
        proof.left_boundary.as_mut().unwrap().path.siblings[1].0[5] ^= 0xFF;
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::RootMismatch(_))
        ));
    }

    #[test]
    fn boundary_inside_range_rejected() {
        // Swap the left boundary for the match itself; order check fires.
        let tree = demo_tree();
        let q = WildcardQuery::parse("*.example.com").unwrap();
        let mut proof = tree.prove(&q);
        let m = proof.matches[0].clone();
        if let Some(b) = &mut proof.left_boundary {
            b.leaf = m;
        }
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::OrderViolation(_)) | Err(VerifyError::RootMismatch(_))
        ));
    }

    #[test]
    fn reconstruct_rejects_path_arity_errors() {
        let tree = demo_tree();
        let q = WildcardQuery::parse("*sub.example.com").unwrap();
        let mut proof = tree.prove(&q);
        proof
            .left_boundary
            .as_mut()
            .unwrap()
            .path
            .siblings
            .push(Digest([0u8; 32]));
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::MalformedProof(_))
        ));

        let mut proof = tree.prove(&q);
        proof.right_boundary.as_mut().unwrap().path.siblings.pop();
        assert!(matches!(
            verify(&tree.snapshot(), &q, &proof),
            Err(VerifyError::MalformedProof(_))
        ));
    }

    /// Build a from-scratch proof out of naive oracle parts and confirm the
    /// verifier accepts it: generation and verification are independent.
    #[test]
    fn verifier_accepts_oracle_built_proofs() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..60 {
            let n = rng.gen_range(1..=40usize);
            let leaves = random_leaves(&mut rng, n);
            let c = demo_constant();
            let names: Vec<SubjectName> = leaves.iter().map(|l| l.name.clone()).collect();
            let q = random_query(&mut rng, &names);
            let (lo, hi) = crate::omega::resolve_range(&q, &names);
            let proof = WildcardProof {
                tree_size: n as u64,
                match_lo: lo as u64,
                matches: leaves[lo..hi].to_vec(),
                left_boundary: (lo > 0).then(|| Boundary {
                    leaf: leaves[lo - 1].clone(),
                    path: super::super::AuditPath {
                        leaf_index: (lo - 1) as u64,
                        siblings: naive_path(&c, &leaves, lo - 1),
                    },
                }),
                right_boundary: (hi < n).then(|| Boundary {
                    leaf: leaves[hi].clone(),
                    path: super::super::AuditPath {
                        leaf_index: hi as u64,
                        siblings: naive_path(&c, &leaves, hi),
                    },
                }),
            };
            let snap = Snapshot {
                root: naive_root(&c, &leaves),
                constant: c,
                batch_size: n as u64,
            };
            assert!(
                verify(&snap, &q, &proof).is_ok(),
                "oracle proof rejected for query {q} n {n}"
            );
        }
    }
}
