//! Random partition of `[n]` into `K` disjoint blocks of equal size.
//!
//! The permutation is a Fisher–Yates shuffle driven by ChaCha8 seeded from a
//! 64-bit integer, so a `(n, K, seed)` triple names one partition on every
//! platform.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Result};
use crate::types::ContaminationTags;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionScheme {
    n: usize,
    block_size: usize,
    blocks: Vec<Vec<usize>>,
    discarded: Vec<usize>,
}

impl PartitionScheme {
    /// Uniformly random partition; the `n mod K` leftover indices are dropped.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 1 || k > n {
            return param(format!("block count K = {k} must lie in [1, n = {n}]"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = n / k;
        let blocks = perm[..k * b].chunks(b).map(<[usize]>::to_vec).collect();
        let discarded = perm[k * b..].to_vec();
        Ok(Self {
            n,
            block_size: b,
            blocks,
            discarded,
        })
    }

    /// The identity partition: block `k` holds indices `k·b .. (k+1)·b`.
    pub fn contiguous(n: usize, k: usize) -> Result<Self> {
        if k < 1 || k > n {
            return param(format!("block count K = {k} must lie in [1, n = {n}]"));
        }
        let b = n / k;
        Ok(Self {
            n,
            block_size: b,
            blocks: (0..k).map(|j| (j * b..(j + 1) * b).collect()).collect(),
            discarded: (k * b..n).collect(),
        })
    }

    /// Fresh partition with the same `n` and `K`.
    pub fn reshuffle(&self, seed: u64) -> Self {
        Self::new(self.n, self.blocks.len(), seed).expect("existing scheme has valid n and K")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn discarded(&self) -> &[usize] {
        &self.discarded
    }

    /// Indices covered by some block.
    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flatten().copied()
    }

    /// Number of blocks holding at least one outlier.
    pub fn contaminated_block_count(&self, tags: &ContaminationTags) -> Result<usize> {
        Ok(self.contaminated_blocks(tags)?.len())
    }

    /// Indices of the blocks holding at least one outlier.
    pub fn contaminated_blocks(&self, tags: &ContaminationTags) -> Result<Vec<usize>> {
        if tags.len() != self.n {
            return param(format!("{} tags for a partition of n = {}", tags.len(), self.n));
        }
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|&i| tags.is_outlier(i)))
            .map(|(k, _)| k)
            .collect())
    }
}

pub fn make_partition(n: usize, k: usize, seed: u64) -> Result<PartitionScheme> {
    PartitionScheme::new(n, k, seed)
}

pub fn reshuffle(scheme: &PartitionScheme, seed: u64) -> PartitionScheme {
    scheme.reshuffle(seed)
}

pub fn contaminated_block_count(scheme: &PartitionScheme, tags: &ContaminationTags) -> Result<usize> {
    scheme.contaminated_block_count(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Tag;
    use proptest::prelude::*;

    fn assert_valid(s: &PartitionScheme, n: usize, k: usize) {
        assert_eq!(s.num_blocks(), k);
        assert_eq!(s.block_size(), n / k);
        let mut seen = vec![false; n];
        for b in s.blocks() {
            assert_eq!(b.len(), s.block_size());
            for &i in b {
                assert!(i < n);
                assert!(!seen[i], "index {i} in two blocks");
                seen[i] = true;
            }
        }
        for &i in s.discarded() {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&x| x));
        assert_eq!(k * s.block_size() + s.discarded().len(), n);
    }

    #[test]
    fn structure() {
        let s = PartitionScheme::new(6, 3, 1).unwrap();
        assert_valid(&s, 6, 3);
        assert!(s.discarded().is_empty());
        let s = PartitionScheme::new(7, 3, 1).unwrap();
        assert_eq!(s.block_size(), 2);
        assert_eq!(s.discarded().len(), 1);
    }

    #[test]
    fn deterministic() {
        assert_eq!(PartitionScheme::new(6, 3, 9).unwrap(), PartitionScheme::new(6, 3, 9).unwrap());
        let s = PartitionScheme::new(10, 2, 4).unwrap();
        assert_eq!(s.reshuffle(77), s.reshuffle(77));
    }

    #[test]
    fn bad_k() {
        assert!(PartitionScheme::new(5, 0, 0).is_err());
        assert!(PartitionScheme::new(5, 6, 0).is_err());
    }

    #[test]
    fn reshuffle_keeps_shape_and_changes_blocks() {
        let s = PartitionScheme::new(8, 2, 0).unwrap();
        let mut changed = 0;
        for seed in 1..=1000u64 {
            let r = s.reshuffle(seed);
            assert_eq!(r.num_blocks(), 2);
            assert_eq!(r.block_size(), 4);
            if r.blocks() != s.blocks() {
                changed += 1;
            }
        }
        // ordered blocks of an 8-permutation repeat with probability (4!·4!)/8! = 1/70
        assert!(changed >= 950, "only {changed} of 1000 reshuffles differed");
    }

    #[test]
    fn contaminated_counts() {
        let s = PartitionScheme::new(10, 5, 3).unwrap();
        assert_eq!(s.contaminated_block_count(&ContaminationTags::all_inliers(10)).unwrap(), 0);
        let all = ContaminationTags::new(vec![Tag::Outlier; 10]);
        assert_eq!(s.contaminated_block_count(&all).unwrap(), 5);
        assert!(s.contaminated_block_count(&ContaminationTags::all_inliers(9)).is_err());
    }

    #[test]
    fn single_outlier_block_is_uniform() {
        let (n, k, trials) = (20, 5, 5000u64);
        let mut tags = vec![Tag::Inlier; n];
        tags[0] = Tag::Outlier;
        let tags = ContaminationTags::new(tags);
        let mut counts = vec![0usize; k];
        for seed in 0..trials {
            let s = PartitionScheme::new(n, k, seed).unwrap();
            let hit = s.contaminated_blocks(&tags).unwrap();
            assert_eq!(hit.len(), 1);
            counts[hit[0]] += 1;
        }
        let expected = trials as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 4 degrees of freedom; p < 1e-5 beyond ~28.5
        assert!(chi2 < 28.5, "chi-square {chi2} for counts {counts:?}");
    }

    proptest! {
        #[test]
        fn invariants_hold(n in 1usize..300, kfrac in 0.0f64..1.0, seed in any::<u64>(),
                           reseed in any::<u64>()) {
            let k = 1 + ((n - 1) as f64 * kfrac) as usize;
            let s = PartitionScheme::new(n, k, seed).unwrap();
            assert_valid(&s, n, k);
            assert_valid(&s.reshuffle(reseed), n, k);
        }

        #[test]
        fn contaminated_at_most_outliers(n in 2usize..200, k in 1usize..20, seed in any::<u64>(),
                                          mask in proptest::collection::vec(any::<bool>(), 200)) {
            let k = k.min(n);
            let tags = ContaminationTags::new(
                mask[..n].iter().map(|&o| if o { Tag::Outlier } else { Tag::Inlier }).collect());
            let s = PartitionScheme::new(n, k, seed).unwrap();
            let c = s.contaminated_block_count(&tags).unwrap();
            prop_assert!(c <= tags.outlier_count());
            prop_assert!(c <= k);
        }
    }
}
