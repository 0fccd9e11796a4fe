//! Append-only Merkle tree operations for the main log.
//!
//! Standard RFC 6962 hashing: leaves are `SHA-256(0x00 || data)`, interior
//! nodes `SHA-256(0x01 || left || right)`, and trees split recursively at
//! the largest power of two below the leaf count. No batch constant is
//! involved; only the per-batch wild-card trees need multi-instance
//! hardening.
//!
//! Proof generation walks the recursive structure over cached leaf hashes;
//! verification reconstructs roots from index arithmetic alone, so the two
//! sides share no code path.

use sha2::{Digest as _, Sha256};

use crate::hashcore::{node_hash, Digest};

/// Root of the empty tree: SHA-256 of the empty string.
pub fn empty_root() -> Digest {
    Digest(Sha256::digest([]).into())
}

/// Leaf hash for an entry's serialized bytes.
pub fn leaf_hash(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(data);
    Digest(h.finalize().into())
}

fn split_point(n: usize) -> usize {
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    k
}

/// Merkle tree head over the given leaf hashes.
pub fn root(leaves: &[Digest]) -> Digest {
    match leaves.len() {
        0 => empty_root(),
        1 => leaves[0],
        n => {
            let k = split_point(n);
            node_hash(&root(&leaves[..k]), &root(&leaves[k..]))
        }
    }
}

/// Audit path for `index`, sibling hashes ordered leaf to root.
pub fn inclusion_proof(leaves: &[Digest], index: usize) -> Vec<Digest> {
    assert!(index < leaves.len());
    if leaves.len() == 1 {
        return Vec::new();
    }
    let k = split_point(leaves.len());
    if index < k {
        let mut p = inclusion_proof(&leaves[..k], index);
        p.push(root(&leaves[k..]));
        p
    } else {
        let mut p = inclusion_proof(&leaves[k..], index - k);
        p.push(root(&leaves[..k]));
        p
    }
}

/// Consistency proof between the first `old` leaves and the full tree.
pub fn consistency_proof(leaves: &[Digest], old: usize) -> Vec<Digest> {
    assert!(0 < old && old <= leaves.len());
    if old == leaves.len() {
        return Vec::new();
    }
    subproof(leaves, old, true)
}

fn subproof(leaves: &[Digest], m: usize, whole: bool) -> Vec<Digest> {
    let n = leaves.len();
    if m == n {
        if whole {
            return Vec::new();
        }
        return vec![root(leaves)];
    }
    let k = split_point(n);
    if m <= k {
        let mut p = subproof(&leaves[..k], m, whole);
        p.push(root(&leaves[k..]));
        p
    } else {
        let mut p = subproof(&leaves[k..], m - k, false);
        p.push(root(&leaves[..k]));
        p
    }
}

/// Check an audit path against a root, by index arithmetic.
///
/// The proof splits into an "inner" part, below the level where the paths
/// of `index` and the last leaf diverge, and a right-border chain above
/// it where every sibling sits to the left.
pub fn verify_inclusion(
    index: u64,
    tree_size: u64,
    leaf: &Digest,
    proof: &[Digest],
    expected_root: &Digest,
) -> bool {
    if index >= tree_size {
        return false;
    }
    let (inner, border) = proof_decomposition(index, tree_size);
    if proof.len() != inner + border {
        return false;
    }
    let mut hash = *leaf;
    for (i, sibling) in proof[..inner].iter().enumerate() {
        if (index >> i) & 1 == 1 {
            hash = node_hash(sibling, &hash);
        } else {
            hash = node_hash(&hash, sibling);
        }
    }
    for sibling in &proof[inner..] {
        hash = node_hash(sibling, &hash);
    }
    hash == *expected_root
}

/// Check a consistency proof between two tree heads, by index arithmetic.
pub fn verify_consistency(
    old_size: u64,
    new_size: u64,
    proof: &[Digest],
    old_root: &Digest,
    new_root: &Digest,
) -> bool {
    if old_size > new_size {
        return false;
    }
    if old_size == new_size {
        return proof.is_empty() && old_root == new_root;
    }
    if old_size == 0 {
        // Anything is consistent with the empty tree.
        return proof.is_empty();
    }

    let shift = old_size.trailing_zeros() as usize;
    let (inner_full, border) = proof_decomposition(old_size - 1, new_size);
    let inner = inner_full - shift;

    let (seed, rest) = if old_size == 1 << shift {
        (*old_root, proof)
    } else {
        match proof.split_first() {
            Some((h, rest)) => (*h, rest),
            None => return false,
        }
    };
    if rest.len() != inner + border {
        return false;
    }
    let mask = (old_size - 1) >> shift;

    // The old root chains only through the left-side siblings; the new
    // root consumes every sibling.
    let mut lhs = seed;
    for (i, h) in rest[..inner].iter().enumerate() {
        if (mask >> i) & 1 == 1 {
            lhs = node_hash(h, &lhs);
        }
    }
    for h in &rest[inner..] {
        lhs = node_hash(h, &lhs);
    }
    if lhs != *old_root {
        return false;
    }

    let mut rhs = seed;
    for (i, h) in rest[..inner].iter().enumerate() {
        if (mask >> i) & 1 == 1 {
            rhs = node_hash(h, &rhs);
        } else {
            rhs = node_hash(&rhs, h);
        }
    }
    for h in &rest[inner..] {
        rhs = node_hash(h, &rhs);
    }
    rhs == *new_root
}

/// Split an inclusion-proof length into the part below the subtree
/// containing `index` ("inner") and the right-border chain above it.
fn proof_decomposition(index: u64, tree_size: u64) -> (usize, usize) {
    let inner = (64 - (index ^ (tree_size - 1)).leading_zeros()) as usize;
    let border = (index >> inner).count_ones() as usize;
    (inner, border)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    // Widely published RFC 6962 test vectors (transparency-dev test
    // suite): leaf data for trees of size 1..=8 and the resulting roots.
    const LEAF_DATA: [&[u8]; 8] = [
        b"",
        &[0x00],
        &[0x10],
        &[0x20, 0x21],
        &[0x30, 0x31],
        &[0x40, 0x41, 0x42, 0x43],
        &[0x50, 0x51, 0x52, 0x53, 0x54, 0x55, 0x56, 0x57],
        &[
            0x60, 0x61, 0x62, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x6b, 0x6c, 0x6d,
            0x6e, 0x6f,
        ],
    ];

    const ROOTS: [&str; 8] = [
        "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d",
        "fac54203e7cc696cf0dfcb42c92a1d9dbaf70ad9e621f4bd8d98662f00e3c125",
        "aeb6bcfe274b70a14fb067a5e5578264db0fa9b51af5e0ba159158f329e06e77",
        "d37ee418976dd95753c1c73862b9398fa2a2cf9b4ff0fdfe8b30cd95209614b7",
        "4e3bbb1f7b478dcfe71fb631631519a3bca12c9aefca1612bfce4c13a86264d4",
        "76e67dadbcdf1e10e1b74ddc608abd2f98dfb16fbce75277b5232a127f2087ef",
        "ddb89be403809e325750d3d263cd78929c2942b7942a34b77e122c9594a74c8c",
        "5dc9da79a70659a9ad559cb701ded9a2ab9d823aad2f4960cfe370eff4604328",
    ];

    fn vector_leaves(n: usize) -> Vec<Digest> {
        LEAF_DATA[..n].iter().map(|d| leaf_hash(d)).collect()
    }

    #[test]
    fn roots_match_published_vectors() {
        for n in 1..=8 {
            assert_eq!(root(&vector_leaves(n)).to_hex(), ROOTS[n - 1], "n={n}");
        }
    }

    #[test]
    fn empty_root_is_sha256_of_nothing() {
        assert_eq!(
            empty_root().to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn inclusion_round_trip_exhaustive() {
        let mut rng = StdRng::seed_from_u64(71);
        for n in 1..=33usize {
            let leaves: Vec<Digest> = (0..n)
                .map(|_| {
                    let mut b = [0u8; 24];
                    rng.fill(&mut b);
                    leaf_hash(&b)
                })
                .collect();
            let r = root(&leaves);
            for i in 0..n {
                let proof = inclusion_proof(&leaves, i);
                assert!(
                    verify_inclusion(i as u64, n as u64, &leaves[i], &proof, &r),
                    "n={n} i={i}"
                );
                // Wrong index or truncated proof must fail.
                if n > 1 {
                    assert!(!verify_inclusion(
                        ((i + 1) % n) as u64,
                        n as u64,
                        &leaves[i],
                        &proof,
                        &r
                    ));
                    assert!(!verify_inclusion(
                        i as u64,
                        n as u64,
                        &leaves[i],
                        &proof[..proof.len() - 1],
                        &r
                    ));
                }
            }
        }
    }

    #[test]
    fn consistency_round_trip_exhaustive() {
        let mut rng = StdRng::seed_from_u64(73);
        let leaves: Vec<Digest> = (0..33)
            .map(|_| {
                let mut b = [0u8; 24];
                rng.fill(&mut b);
                leaf_hash(&b)
            })
            .collect();
        for new in 1..=33usize {
            let new_root = root(&leaves[..new]);
            for old in 1..=new {
                let old_root = root(&leaves[..old]);
                let proof = consistency_proof(&leaves[..new], old);
                assert!(
                    verify_consistency(old as u64, new as u64, &proof, &old_root, &new_root),
                    "old={old} new={new}"
                );
            }
        }
    }

    #[test]
    fn consistency_same_size_is_empty() {
        let leaves = vector_leaves(5);
        assert!(consistency_proof(&leaves, 5).is_empty());
        let r = root(&leaves);
        assert!(verify_consistency(5, 5, &[], &r, &r));
        assert!(!verify_consistency(5, 5, &[], &r, &empty_root()));
    }

    #[test]
    fn consistency_rejects_mutations() {
        let mut rng = StdRng::seed_from_u64(79);
        let leaves: Vec<Digest> = (0..21)
            .map(|_| {
                let mut b = [0u8; 24];
                rng.fill(&mut b);
                leaf_hash(&b)
            })
            .collect();
        for old in 1..21usize {
            let new_root = root(&leaves);
            let old_root = root(&leaves[..old]);
            let mut proof = consistency_proof(&leaves, old);
            if proof.is_empty() {
                continue;
            }
            let k = rng.gen_range(0..proof.len());
            proof[k].0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
            assert!(
                !verify_consistency(old as u64, 21, &proof, &old_root, &new_root),
                "mutation accepted at old={old}"
            );
        }
    }

    #[test]
    fn inclusion_rejects_sibling_mutations() {
        let mut rng = StdRng::seed_from_u64(83);
        let leaves = vector_leaves(8);
        let r = root(&leaves);
        for i in 0..8usize {
            let mut proof = inclusion_proof(&leaves, i);
            let k = rng.gen_range(0..proof.len());
            proof[k].0[0] ^= 1;
            assert!(!verify_inclusion(i as u64, 8, &leaves[i], &proof, &r));
        }
    }
}
