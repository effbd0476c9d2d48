//! Block partitions of augmented sequences and the permutations applied to
//! them.
//!
//! A sequence is cut at every occurrence of its final pair (the anchor):
//!
//! ```text
//! 7 5 2 | 1 7 8 | 1 6 6 3 5 | 1 3 4 2 | 1
//! prefix  block0  block1      block2    block3 (terminal)
//! ```
//!
//! Blocks `0..d-1` each run from one anchor visit to just before the next, so
//! reordering them leaves the first element and every transition count
//! unchanged. The terminal block is the single final anchor pair; moving it
//! would trade one transition `last(block) -> anchor` for `anchor -> anchor`,
//! so the permutations used for prediction keep it in place.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hmm::{AugmentedSequence, Pair};
use crate::rng::rng_from_seed;

/// Prefix plus anchor-delimited blocks of a source sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    source: Vec<Pair>,
    /// Start offset of every block in `source`; the last is `source.len() - 1`.
    starts: Vec<usize>,
}

impl BlockPartition {
    pub fn anchor(&self) -> Pair {
        self.source[self.source.len() - 1]
    }

    pub fn prefix(&self) -> &[Pair] {
        &self.source[..self.starts[0]]
    }

    /// Number of blocks, terminal block included.
    pub fn block_count(&self) -> usize {
        self.starts.len()
    }

    /// Number of complete blocks, i.e. the ones that may be reordered.
    pub fn exchangeable_count(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn block(&self, k: usize) -> &[Pair] {
        let end = self.starts.get(k + 1).copied().unwrap_or(self.source.len());
        &self.source[self.starts[k]..end]
    }

    pub fn blocks(&self) -> impl ExactSizeIterator<Item = &[Pair]> + '_ {
        (0..self.starts.len()).map(move |k| self.block(k))
    }

    pub fn source(&self) -> &[Pair] {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// The last `len` pairs of `prefix ∥ blocks[perm[0]] ∥ … ∥ blocks[perm[d-1]]`,
    /// without materializing the whole sequence.
    pub fn tail_window(&self, perm: &[usize], len: usize) -> Result<Vec<Pair>> {
        validate_permutation(perm, self.block_count())?;
        if len > self.source.len() {
            return Err(Error::TooShort {
                needed: len,
                got: self.source.len(),
            });
        }
        let mut parts: Vec<&[Pair]> = Vec::new();
        let mut need = len;
        for &k in perm.iter().rev() {
            if need == 0 {
                break;
            }
            let block = self.block(k);
            let take = need.min(block.len());
            parts.push(&block[block.len() - take..]);
            need -= take;
        }
        if need > 0 {
            let prefix = self.prefix();
            parts.push(&prefix[prefix.len() - need..]);
        }
        Ok(parts.into_iter().rev().flatten().copied().collect())
    }
}

/// Splits `seq` at every occurrence of its final pair.
pub fn partition_blocks(seq: &AugmentedSequence) -> BlockPartition {
    partition_pairs(seq.pairs().to_vec())
}

pub(crate) fn partition_pairs(source: Vec<Pair>) -> BlockPartition {
    let anchor = source[source.len() - 1];
    let starts = source
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| (p == anchor).then_some(i))
        .collect();
    BlockPartition { source, starts }
}

/// Upper bound on the number of permutations to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum PermutationBudget {
    #[default]
    Unlimited,
    Limited(u64),
}

impl PermutationBudget {
    pub fn admits(self, count: u128) -> bool {
        match self {
            PermutationBudget::Unlimited => true,
            PermutationBudget::Limited(b) => count <= b as u128,
        }
    }
}

/// Whether the terminal anchor block takes part in the arrangements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalBlock {
    /// Only the complete blocks are rearranged; the terminal block stays last.
    /// Rearrangements preserve every transition count.
    #[default]
    Fixed,
    /// All `d` blocks, terminal included, fill the last `m + 1` slots. Some
    /// rearrangements change the transition counts.
    Movable,
}

/// A list of distinct permutations of `0..degree` containing the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub degree: usize,
    pub perms: Vec<Vec<usize>>,
    /// Size of the full arrangement set before any subsampling.
    pub full_cardinality: u128,
    /// True when `perms` is a random subsample of the full set.
    pub approximate: bool,
}

impl PermutationSet {
    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.perms
            .iter()
            .position(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }
}

/// `d · (d-1) · … · (d-k+1)`, saturating at `u128::MAX`.
pub fn falling_factorial(d: usize, k: usize) -> u128 {
    if k > d {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((d - i) as u128);
    }
    acc
}

/// Number of trailing slots that tail arrangements of `d` blocks fill for
/// horizon `m`: `m + 1`, or all `d` when there are fewer blocks than that.
pub fn tail_slots(d: usize, horizon: usize) -> usize {
    (horizon + 1).min(d)
}

/// Size of the tail-arrangement set: `d!/(d-m-1)!` when `d ≥ m+1`, else `d!`.
pub fn tail_arrangement_count(d: usize, horizon: usize) -> u128 {
    falling_factorial(d, tail_slots(d, horizon))
}

/// Lexicographic rank of the identity among tail arrangements.
fn identity_rank(d: usize, k: usize) -> u128 {
    // every slot picks the (d-k)-th smallest remaining block
    let mut rank: u128 = 0;
    for s in 0..k {
        rank = rank * (d - s) as u128 + (d - k) as u128;
    }
    rank
}

/// Decodes the arrangement with lexicographic rank `index`: the first tail slot
/// is the most significant digit (radix `d`), the last the least (radix
/// `d-k+1`). Unselected blocks lead in ascending order.
fn unrank_arrangement(mut index: u128, d: usize, k: usize) -> Vec<usize> {
    let mut digits = alloc::vec![0usize; k];
    for s in (0..k).rev() {
        let radix = (d - s) as u128;
        digits[s] = (index % radix) as usize;
        index /= radix;
    }
    let mut available: Vec<usize> = (0..d).collect();
    let selection: Vec<usize> = digits.iter().map(|&digit| available.remove(digit)).collect();
    available.extend(selection);
    available
}

/// All ways to place an ordered selection of blocks in the last `m + 1` slots
/// (all `d!` orders when `d < m + 2`), the remaining blocks keeping their
/// relative order in front.
///
/// If the set is larger than `budget`, a uniform subsample of `budget`
/// arrangements is drawn with `seed`; the identity is always kept and the
/// result is marked approximate.
pub fn enumerate_tail_arrangements(
    d: usize,
    horizon: usize,
    budget: PermutationBudget,
    seed: u64,
) -> Result<PermutationSet> {
    if d == 0 {
        return Err(Error::InvalidParameter("block count must be positive"));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive"));
    }
    if budget == PermutationBudget::Limited(0) {
        return Err(Error::InvalidParameter("permutation budget must be positive"));
    }
    let k = tail_slots(d, horizon);
    let total = falling_factorial(d, k);
    if budget.admits(total) {
        let perms = (0..total).map(|r| unrank_arrangement(r, d, k)).collect();
        return Ok(PermutationSet {
            degree: d,
            perms,
            full_cardinality: total,
            approximate: false,
        });
    }
    let PermutationBudget::Limited(size) = budget else {
        unreachable!("unlimited budget admits every count")
    };
    let id = identity_rank(d, k);
    let mut ranks = sample_distinct(total - 1, size as u128 - 1, seed);
    ranks = ranks.into_iter().map(|r| if r >= id { r + 1 } else { r }).collect();
    ranks.insert(id);
    Ok(PermutationSet {
        degree: d,
        perms: ranks.into_iter().map(|r| unrank_arrangement(r, d, k)).collect(),
        full_cardinality: total,
        approximate: true,
    })
}

/// Floyd's algorithm: `amount` distinct values from `0..population`.
fn sample_distinct(population: u128, amount: u128, seed: u64) -> BTreeSet<u128> {
    let mut rng = rng_from_seed(seed);
    let mut chosen = BTreeSet::new();
    for j in population - amount..population {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen
}

/// Tail arrangements of the exchangeable blocks of `partition`, extended to
/// full block permutations that keep the terminal block last.
pub fn excursion_arrangements(
    partition: &BlockPartition,
    horizon: usize,
    budget: PermutationBudget,
    seed: u64,
) -> Result<PermutationSet> {
    let d = partition.block_count();
    let e = partition.exchangeable_count();
    if e == 0 {
        return Ok(PermutationSet {
            degree: d,
            perms: alloc::vec![alloc::vec![0]],
            full_cardinality: 1,
            approximate: false,
        });
    }
    let mut set = enumerate_tail_arrangements(e, horizon, budget, seed)?;
    for p in &mut set.perms {
        p.push(e);
    }
    set.degree = d;
    Ok(set)
}

/// Arrangements of the blocks of `partition` under the given terminal policy.
pub fn block_arrangements(
    partition: &BlockPartition,
    horizon: usize,
    terminal: TerminalBlock,
    budget: PermutationBudget,
    seed: u64,
) -> Result<PermutationSet> {
    match terminal {
        TerminalBlock::Fixed => excursion_arrangements(partition, horizon, budget, seed),
        TerminalBlock::Movable => enumerate_tail_arrangements(partition.block_count(), horizon, budget, seed),
    }
}

/// Size of the full arrangement set under the given terminal policy.
pub fn arrangement_count(partition: &BlockPartition, horizon: usize, terminal: TerminalBlock) -> u128 {
    match terminal {
        TerminalBlock::Fixed => match partition.exchangeable_count() {
            0 => 1,
            e => tail_arrangement_count(e, horizon),
        },
        TerminalBlock::Movable => tail_arrangement_count(partition.block_count(), horizon),
    }
}

fn validate_permutation(perm: &[usize], degree: usize) -> Result<()> {
    if perm.len() != degree {
        return Err(Error::LengthMismatch {
            expected: degree,
            got: perm.len(),
        });
    }
    let mut seen = alloc::vec![false; degree];
    for &v in perm {
        if v >= degree || seen[v] {
            return Err(Error::InvalidPermutation { degree });
        }
        seen[v] = true;
    }
    Ok(())
}

/// `prefix ∥ blocks[perm[0]] ∥ … ∥ blocks[perm[d-1]]`.
pub fn apply_permutation(partition: &BlockPartition, perm: &[usize]) -> Result<AugmentedSequence> {
    validate_permutation(perm, partition.block_count())?;
    let mut out = Vec::with_capacity(partition.len());
    out.extend_from_slice(partition.prefix());
    for &k in perm {
        out.extend_from_slice(partition.block(k));
    }
    AugmentedSequence::new(out)
}

fn sorted_transitions(pairs: &[Pair]) -> Vec<(Pair, Pair)> {
    let mut t: Vec<(Pair, Pair)> = pairs.windows(2).map(|w| (w[0], w[1])).collect();
    t.sort_unstable();
    t
}

/// Same first element and the same count of every adjacent transition `u -> v`
/// of augmented states.
pub fn check_partial_exchangeability(a: &AugmentedSequence, b: &AugmentedSequence) -> bool {
    a.len() == b.len() && a.first() == b.first() && sorted_transitions(a.pairs()) == sorted_transitions(b.pairs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn constant_obs(states: &[usize]) -> AugmentedSequence {
        AugmentedSequence::from_parts(states, &vec![0; states.len()]).unwrap()
    }

    fn digits(s: &str) -> Vec<usize> {
        s.bytes().map(|b| (b - b'0') as usize).collect()
    }

    fn states_of(pairs: &[Pair]) -> Vec<usize> {
        pairs.iter().map(|p| p.state).collect()
    }

    #[test]
    fn one_block_example() {
        let seq = constant_obs(&digits("7521781663513421"));
        let part = partition_blocks(&seq);
        assert_eq!(part.anchor(), Pair::new(1, 0));
        assert_eq!(states_of(part.prefix()), digits("752"));
        let blocks: Vec<Vec<usize>> = part.blocks().map(states_of).collect();
        assert_eq!(
            blocks,
            vec![digits("178"), digits("16635"), digits("1342"), digits("1")]
        );
        assert_eq!(part.block_count(), 4);
        assert_eq!(part.exchangeable_count(), 3);
    }

    #[test]
    fn length_one_and_all_anchor() {
        let part = partition_blocks(&constant_obs(&[4]));
        assert!(part.prefix().is_empty());
        assert_eq!(part.block_count(), 1);
        let part = partition_blocks(&constant_obs(&[1, 1, 1]));
        assert!(part.prefix().is_empty());
        assert_eq!(part.blocks().map(|b| b.len()).collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    #[test]
    fn anchor_uses_observation_too() {
        let seq = AugmentedSequence::from_parts(&[1, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        let part = partition_blocks(&seq);
        assert_eq!(part.prefix().len(), 1);
        assert_eq!(part.block_count(), 2);
    }

    #[test]
    fn arrangement_counts() {
        let set = enumerate_tail_arrangements(4, 1, PermutationBudget::Unlimited, 0).unwrap();
        assert_eq!(set.len(), 12);
        let set = enumerate_tail_arrangements(1, 3, PermutationBudget::Unlimited, 0).unwrap();
        assert_eq!(set.perms, vec![vec![0]]);
        let set = enumerate_tail_arrangements(3, 3, PermutationBudget::Unlimited, 0).unwrap();
        assert_eq!(set.len(), 6);
        let distinct: BTreeSet<Vec<usize>> = set.perms.iter().cloned().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn arrangements_keep_leading_order_and_identity() {
        let set = enumerate_tail_arrangements(5, 1, PermutationBudget::Unlimited, 0).unwrap();
        assert_eq!(set.len(), 20);
        assert_eq!(
            set.identity_index(),
            Some(set.perms.iter().position(|p| p == &vec![0, 1, 2, 3, 4]).unwrap())
        );
        for p in &set.perms {
            let lead = &p[..3];
            assert!(lead.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn budget_subsample_keeps_identity() {
        let set = enumerate_tail_arrangements(10, 2, PermutationBudget::Limited(50), 9).unwrap();
        assert!(set.approximate);
        assert_eq!(set.len(), 50);
        assert_eq!(set.full_cardinality, 720);
        assert!(set.identity_index().is_some());
        let distinct: BTreeSet<Vec<usize>> = set.perms.iter().cloned().collect();
        assert_eq!(distinct.len(), 50);
        assert_eq!(
            set,
            enumerate_tail_arrangements(10, 2, PermutationBudget::Limited(50), 9).unwrap()
        );
        let single = enumerate_tail_arrangements(10, 2, PermutationBudget::Limited(1), 9).unwrap();
        assert_eq!(single.perms, vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn identity_reconstructs() {
        let seq = constant_obs(&digits("7521781663513421"));
        let part = partition_blocks(&seq);
        assert_eq!(apply_permutation(&part, &[0, 1, 2, 3]).unwrap(), seq);
    }

    #[test]
    fn swapping_first_two_blocks() {
        let seq = constant_obs(&digits("7521781663513421"));
        let part = partition_blocks(&seq);
        let out = apply_permutation(&part, &[1, 0, 2, 3]).unwrap();
        assert_eq!(out.states(), digits("7521663517813421"));
        assert!(check_partial_exchangeability(&seq, &out));
    }

    #[test]
    fn moving_terminal_block_breaks_transition_counts() {
        let seq = constant_obs(&[1, 2, 1]);
        let part = partition_blocks(&seq);
        let moved = apply_permutation(&part, &[1, 0]).unwrap();
        assert_eq!(moved.states(), vec![1, 1, 2]);
        assert!(!check_partial_exchangeability(&seq, &moved));
    }

    #[test]
    fn permutation_errors() {
        let part = partition_blocks(&constant_obs(&[1, 2, 1]));
        assert!(matches!(
            apply_permutation(&part, &[0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            apply_permutation(&part, &[1, 1]),
            Err(Error::InvalidPermutation { .. })
        ));
    }

    #[test]
    fn tail_window_matches_materialized_sequence() {
        let seq = constant_obs(&digits("7521781663513421"));
        let part = partition_blocks(&seq);
        let perm = [2, 0, 1, 3];
        let full = apply_permutation(&part, &perm).unwrap();
        for len in 1..=full.len() {
            let w = part.tail_window(&perm, len).unwrap();
            assert_eq!(w.as_slice(), &full.pairs()[full.len() - len..]);
        }
    }

    #[test]
    fn shared_start_and_counts() {
        assert!(check_partial_exchangeability(
            &constant_obs(&digits("115117")),
            &constant_obs(&digits("111517"))
        ));
        assert!(!check_partial_exchangeability(
            &constant_obs(&digits("115117")),
            &constant_obs(&digits("511117"))
        ));
    }

    #[test]
    fn excursion_arrangements_fix_terminal() {
        let seq = constant_obs(&digits("7521781663513421"));
        let part = partition_blocks(&seq);
        let set = excursion_arrangements(&part, 1, PermutationBudget::Unlimited, 0).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.perms.iter().all(|p| p[3] == 3));
        for p in &set.perms {
            assert!(check_partial_exchangeability(
                &seq,
                &apply_permutation(&part, p).unwrap()
            ));
        }
        let lone = partition_blocks(&constant_obs(&[2, 3, 1]));
        assert_eq!(
            excursion_arrangements(&lone, 2, PermutationBudget::Unlimited, 0)
                .unwrap()
                .perms,
            vec![vec![0]]
        );
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling_factorial(5, 0), 1);
        assert_eq!(falling_factorial(5, 2), 20);
        assert_eq!(falling_factorial(3, 4), 0);
        assert_eq!(tail_arrangement_count(4, 1), 12);
        assert_eq!(tail_arrangement_count(3, 3), 6);
    }
}
