//! Conformity scores and prediction sets.
//!
//! For each candidate hidden sequence the calibration path is extended with
//! the candidate and the test observations, parameters are re-estimated by
//! counting, and the extended path is cut into blocks anchored at its final
//! pair. Every tail arrangement of the exchangeable blocks yields a permuted
//! path whose conformity score is
//!
//! ```text
//! S(π) = 1 - (1/m) Σ_k Pr(x_{T+k} | x_T; y_{T+1..T+k})
//! ```
//!
//! evaluated by the forward filter on the last `m + 1` positions. The
//! candidate's quantile is the share of arrangements scoring at least as high
//! as the unpermuted path, and the candidate is kept when that share exceeds
//! `alpha`.
//!
//! Scores depend only on the last `m + 1` positions, so instead of walking
//! every arrangement the engine enumerates the distinct trailing windows with
//! their multiplicities. [`score_distribution_explicit`] walks an explicit
//! [`PermutationSet`] and is used when a permutation budget forces
//! subsampling; the two routes agree exactly on the full set.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchangeability::{
    arrangement_count, block_arrangements, falling_factorial, partition_pairs, tail_slots, BlockPartition,
    PermutationBudget, PermutationSet, TerminalBlock,
};
use crate::hmm::{filter_step, AugmentedSequence, Counts, HmmParams, Pair};

/// Largest `n^m` that [`predict_hmm`] will enumerate.
pub const MAX_CANDIDATES: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    /// Miscoverage level, strictly between 0 and 1.
    pub alpha: f64,
    /// Prediction horizon `m`.
    pub horizon: usize,
    pub budget: PermutationBudget,
    pub terminal: TerminalBlock,
    /// Seed for permutation subsampling; unused when the budget is not hit.
    pub seed: u64,
}

impl ConformalConfig {
    pub fn new(alpha: f64, horizon: usize) -> Result<Self> {
        let config = Self {
            alpha,
            horizon,
            budget: PermutationBudget::Unlimited,
            terminal: TerminalBlock::Fixed,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_budget(mut self, budget: PermutationBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalBlock) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie strictly between 0 and 1"));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1"));
        }
        if self.budget == PermutationBudget::Limited(0) {
            return Err(Error::InvalidParameter("permutation budget must be positive"));
        }
        Ok(())
    }
}

/// Conformity score of a trailing window `[(x_T, ·), (x_{T+1}, y_{T+1}), …]`.
///
/// A step with zero likelihood scores 1, the worst value.
pub fn window_score(params: &HmmParams, window: &[Pair]) -> f64 {
    let n = params.n_states();
    let horizon = window.len() - 1;
    let mut prev = vec![0.0; n];
    let mut next = vec![0.0; n];
    prev[window[0].state] = 1.0;
    let mut total = 0.0;
    for pair in &window[1..] {
        if !filter_step(params, &prev, pair.obs, &mut next) {
            return 1.0;
        }
        total += next[pair.state];
        core::mem::swap(&mut prev, &mut next);
    }
    1.0 - total / horizon as f64
}

/// Score of a (permuted) sequence over its last `horizon + 1` positions.
pub fn conformity_score(params: &HmmParams, permuted: &AugmentedSequence, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1"));
    }
    if permuted.len() < horizon + 1 {
        return Err(Error::TooShort {
            needed: horizon + 1,
            got: permuted.len(),
        });
    }
    permuted.check_bounds(params.n_states(), params.n_obs())?;
    Ok(window_score(params, &permuted.pairs()[permuted.len() - horizon - 1..]))
}

/// Share of scores at least as large as `scores[identity]`.
pub fn quantile_rank(scores: &[f64], identity: usize) -> Result<f64> {
    let Some(&reference) = scores.get(identity) else {
        return Err(Error::IndexOutOfRange {
            position: 0,
            index: identity,
            limit: scores.len(),
        });
    };
    let above = scores.iter().filter(|&&s| s >= reference).count();
    Ok(above as f64 / scores.len() as f64)
}

/// Scores of all permutations of one candidate, grouped by value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub identity_score: f64,
    /// `(score, number of permutations)`, one entry per distinct window.
    pub atoms: Vec<(f64, u128)>,
    /// Number of permutations scored.
    pub total: u128,
    /// Size of the full arrangement set.
    pub full_cardinality: u128,
    pub approximate: bool,
}

impl ScoreDistribution {
    pub fn count_at_or_above(&self) -> u128 {
        self.atoms
            .iter()
            .filter(|(s, _)| *s >= self.identity_score)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn count_below(&self) -> u128 {
        self.atoms
            .iter()
            .filter(|(s, _)| *s < self.identity_score)
            .map(|(_, w)| w)
            .sum()
    }

    /// Permutations tied with the identity, the identity included.
    pub fn count_tied(&self) -> u128 {
        self.atoms
            .iter()
            .filter(|(s, _)| *s == self.identity_score)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn quantile(&self) -> f64 {
        self.count_at_or_above() as f64 / self.total as f64
    }
}

fn score_windows(params: &HmmParams, windows: BTreeMap<Vec<Pair>, u128>) -> Vec<(f64, u128)> {
    windows
        .into_iter()
        .map(|(w, weight)| (window_score(params, &w), weight))
        .collect()
}

fn identity_window(partition: &BlockPartition, horizon: usize) -> &[Pair] {
    let src = partition.source();
    &src[src.len() - horizon - 1..]
}

/// Walks the permutations of `perms` one by one.
pub fn score_distribution_explicit(
    params: &HmmParams,
    partition: &BlockPartition,
    perms: &PermutationSet,
    horizon: usize,
) -> Result<ScoreDistribution> {
    if partition.len() < horizon + 1 {
        return Err(Error::TooShort {
            needed: horizon + 1,
            got: partition.len(),
        });
    }
    let mut windows: BTreeMap<Vec<Pair>, u128> = BTreeMap::new();
    for perm in &perms.perms {
        *windows.entry(partition.tail_window(perm, horizon + 1)?).or_default() += 1;
    }
    let id = identity_window(partition, horizon);
    Ok(ScoreDistribution {
        identity_score: window_score(params, id),
        atoms: score_windows(params, windows),
        total: perms.len() as u128,
        full_cardinality: perms.full_cardinality,
        approximate: perms.approximate,
    })
}

struct WindowCounter<'a> {
    classes: Vec<(&'a [Pair], u128)>,
    prefix: &'a [Pair],
    suffix: Option<Pair>,
    pool: usize,
    slots: usize,
    parts: Vec<&'a [Pair]>,
    out: BTreeMap<Vec<Pair>, u128>,
}

impl<'a> WindowCounter<'a> {
    fn record(&mut self, weight: u128) {
        let mut w: Vec<Pair> = self.parts.iter().rev().flat_map(|p| p.iter().copied()).collect();
        w.extend(self.suffix);
        *self.out.entry(w).or_default() += weight;
    }

    /// `used` tail slots (counted from the end) are filled and `need` more
    /// positions are required in front of them.
    fn explore(&mut self, used: usize, need: usize, weight: u128) {
        if need == 0 {
            let rest = falling_factorial(self.pool - used, self.slots - used);
            self.record(weight * rest);
            return;
        }
        if used == self.slots {
            // every block is placed, the remainder comes from the prefix
            let prefix = self.prefix;
            self.parts.push(&prefix[prefix.len() - need..]);
            self.record(weight);
            self.parts.pop();
            return;
        }
        let rest = falling_factorial(self.pool - used - 1, self.slots - used - 1);
        let mut terminal: BTreeMap<&'a [Pair], u128> = BTreeMap::new();
        for c in 0..self.classes.len() {
            let (content, count) = self.classes[c];
            if count == 0 {
                continue;
            }
            if content.len() >= need {
                *terminal.entry(&content[content.len() - need..]).or_default() += count;
            } else {
                self.classes[c].1 -= 1;
                self.parts.push(content);
                self.explore(used + 1, need - content.len(), weight * count);
                self.parts.pop();
                self.classes[c].1 += 1;
            }
        }
        for (suffix, count) in terminal {
            self.parts.push(suffix);
            self.record(weight * count * rest);
            self.parts.pop();
        }
    }
}

/// Exact score distribution over every block arrangement, computed from the
/// distinct trailing windows and their multiplicities.
pub fn score_distribution_exact(
    params: &HmmParams,
    partition: &BlockPartition,
    horizon: usize,
    terminal: TerminalBlock,
) -> Result<ScoreDistribution> {
    if partition.len() < horizon + 1 {
        return Err(Error::TooShort {
            needed: horizon + 1,
            got: partition.len(),
        });
    }
    let (pool, suffix, need) = match terminal {
        TerminalBlock::Fixed => (partition.exchangeable_count(), Some(partition.anchor()), horizon),
        TerminalBlock::Movable => (partition.block_count(), None, horizon + 1),
    };
    let slots = if pool == 0 { 0 } else { tail_slots(pool, horizon) };
    let mut by_content: BTreeMap<&[Pair], u128> = BTreeMap::new();
    for k in 0..pool {
        *by_content.entry(partition.block(k)).or_default() += 1;
    }
    let mut counter = WindowCounter {
        classes: by_content.into_iter().collect(),
        prefix: partition.prefix(),
        suffix,
        pool,
        slots,
        parts: Vec::new(),
        out: BTreeMap::new(),
    };
    counter.explore(0, need, 1);
    let total = falling_factorial(pool, slots);
    debug_assert_eq!(counter.out.values().sum::<u128>(), total);
    let id = identity_window(partition, horizon);
    Ok(ScoreDistribution {
        identity_score: window_score(params, id),
        atoms: score_windows(params, counter.out),
        total,
        full_cardinality: total,
        approximate: false,
    })
}

/// Exact distribution when the budget admits the full arrangement set,
/// otherwise a seeded subsample scored permutation by permutation.
pub fn score_distribution(
    params: &HmmParams,
    partition: &BlockPartition,
    horizon: usize,
    config: &ConformalConfig,
) -> Result<ScoreDistribution> {
    if config
        .budget
        .admits(arrangement_count(partition, horizon, config.terminal))
    {
        score_distribution_exact(params, partition, horizon, config.terminal)
    } else {
        let perms = block_arrangements(partition, horizon, config.terminal, config.budget, config.seed)?;
        score_distribution_explicit(params, partition, &perms, horizon)
    }
}

/// Result for one candidate sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub sequence: Vec<usize>,
    pub quantile: f64,
    /// Permutations scoring at least as high as the identity.
    pub at_or_above: u128,
    /// Permutations scored (`|Π|`).
    pub permutations: u128,
    /// Size of the full arrangement set; differs from `permutations` only
    /// when subsampled.
    pub full_cardinality: u128,
    /// Block count `d` of the extended sequence, terminal block included.
    pub blocks: usize,
    pub approximate: bool,
    pub member: bool,
}

/// Everything computed for one candidate.
#[derive(Debug, Clone)]
pub struct CandidateAnalysis {
    pub params: HmmParams,
    pub partition: BlockPartition,
    pub distribution: ScoreDistribution,
}

/// Output of [`predict_hmm`]: every candidate, lexicographically ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub horizon: usize,
    pub alpha: f64,
    pub n_states: usize,
    pub candidates: Vec<CandidateOutcome>,
}

impl PredictionSet {
    pub fn members(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.candidates
            .iter()
            .filter(|c| c.member)
            .map(|c| c.sequence.as_slice())
    }

    pub fn len(&self) -> usize {
        self.candidates.iter().filter(|c| c.member).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, sequence: &[usize]) -> bool {
        self.candidates.iter().any(|c| c.member && c.sequence == sequence)
    }

    pub fn candidate(&self, sequence: &[usize]) -> Option<&CandidateOutcome> {
        self.candidates.iter().find(|c| c.sequence == sequence)
    }

    pub fn approximate(&self) -> bool {
        self.candidates.iter().any(|c| c.approximate)
    }
}

fn check_inputs(
    calibration: &AugmentedSequence,
    test_obs: &[usize],
    n_states: usize,
    n_obs: usize,
    config: &ConformalConfig,
) -> Result<()> {
    config.validate()?;
    if n_states == 0 || n_obs == 0 {
        return Err(Error::InvalidParameter("state and observation counts must be positive"));
    }
    if calibration.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: calibration.len(),
        });
    }
    if test_obs.len() != config.horizon {
        return Err(Error::Shape("number of test observations differs from the horizon"));
    }
    calibration.check_bounds(n_states, n_obs)?;
    if let Some((position, &index)) = test_obs.iter().enumerate().find(|(_, &y)| y >= n_obs) {
        return Err(Error::IndexOutOfRange {
            position,
            index,
            limit: n_obs,
        });
    }
    Ok(())
}

fn analyse(extended: Vec<Pair>, n_states: usize, n_obs: usize, config: &ConformalConfig) -> Result<CandidateAnalysis> {
    let params = Counts::from_pairs(&extended, n_states, n_obs)?.to_params();
    let partition = partition_pairs(extended);
    let distribution = score_distribution(&params, &partition, config.horizon, config)?;
    Ok(CandidateAnalysis {
        params,
        partition,
        distribution,
    })
}

fn extend(calibration: &AugmentedSequence, test_obs: &[usize], candidate: &[usize]) -> Vec<Pair> {
    let mut extended = Vec::with_capacity(calibration.len() + candidate.len());
    extended.extend_from_slice(calibration.pairs());
    extended.extend(candidate.iter().zip(test_obs).map(|(&x, &y)| Pair::new(x, y)));
    extended
}

/// Full analysis of one candidate: estimated parameters, partition and the
/// score distribution over its permutations.
pub fn analyse_candidate(
    calibration: &AugmentedSequence,
    test_obs: &[usize],
    candidate: &[usize],
    n_states: usize,
    n_obs: usize,
    config: &ConformalConfig,
) -> Result<CandidateAnalysis> {
    check_inputs(calibration, test_obs, n_states, n_obs, config)?;
    if candidate.len() != config.horizon {
        return Err(Error::Shape("candidate length differs from the horizon"));
    }
    if let Some((position, &index)) = candidate.iter().enumerate().find(|(_, &x)| x >= n_states) {
        return Err(Error::IndexOutOfRange {
            position,
            index,
            limit: n_states,
        });
    }
    analyse(extend(calibration, test_obs, candidate), n_states, n_obs, config)
}

fn outcome(candidate: Vec<usize>, analysis: &CandidateAnalysis, alpha: f64) -> CandidateOutcome {
    let dist = &analysis.distribution;
    let quantile = dist.quantile();
    CandidateOutcome {
        sequence: candidate,
        quantile,
        at_or_above: dist.count_at_or_above(),
        permutations: dist.total,
        full_cardinality: dist.full_cardinality,
        blocks: analysis.partition.block_count(),
        approximate: dist.approximate,
        member: quantile > alpha,
    }
}

/// Scores one candidate sequence.
pub fn evaluate_candidate(
    calibration: &AugmentedSequence,
    test_obs: &[usize],
    candidate: &[usize],
    n_states: usize,
    n_obs: usize,
    config: &ConformalConfig,
) -> Result<CandidateOutcome> {
    let analysis = analyse_candidate(calibration, test_obs, candidate, n_states, n_obs, config)?;
    Ok(outcome(candidate.to_vec(), &analysis, config.alpha))
}

/// Candidate `index` of `n^m` in lexicographic order.
pub fn candidate_at(index: u128, n_states: usize, horizon: usize) -> Vec<usize> {
    let mut out = vec![0; horizon];
    let mut rest = index;
    for slot in out.iter_mut().rev() {
        *slot = (rest % n_states as u128) as usize;
        rest /= n_states as u128;
    }
    out
}

pub fn candidate_count(n_states: usize, horizon: usize) -> u128 {
    (n_states as u128).saturating_pow(horizon as u32)
}

/// Prediction set over `X^m` for the hidden states behind `test_obs`.
pub fn predict_hmm(
    calibration: &AugmentedSequence,
    test_obs: &[usize],
    n_states: usize,
    n_obs: usize,
    config: &ConformalConfig,
) -> Result<PredictionSet> {
    check_inputs(calibration, test_obs, n_states, n_obs, config)?;
    let total = candidate_count(n_states, config.horizon);
    if total > MAX_CANDIDATES {
        return Err(Error::CandidateExplosion { candidates: total });
    }
    let mut candidates = Vec::with_capacity(total as usize);
    for index in 0..total {
        let candidate = candidate_at(index, n_states, config.horizon);
        let analysis = analyse(extend(calibration, test_obs, &candidate), n_states, n_obs, config)?;
        candidates.push(outcome(candidate, &analysis, config.alpha));
    }
    Ok(PredictionSet {
        horizon: config.horizon,
        alpha: config.alpha,
        n_states,
        candidates,
    })
}

/// How tied calibration scores count toward a candidate's rank in the
/// classical procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankRule {
    /// Calibration scores strictly below the candidate's, plus one for the
    /// candidate itself. Ties favor inclusion.
    #[default]
    TiesIncluded,
    /// Calibration scores less than or equal to the candidate's, plus one.
    /// Ties count against the candidate.
    TiesCounted,
}

/// Emission-based score `A(i, y) = 1 - B̂[i][y]` with `B̂` counted from the
/// calibration pairs (uniform rows for unseen states).
pub fn emission_score(calibration: &[Pair], n_states: usize, n_obs: usize) -> Result<impl Fn(usize, usize) -> f64> {
    let params = Counts::from_pairs(calibration, n_states, n_obs)?.to_params();
    Ok(move |state: usize, obs: usize| 1.0 - params.emission(state, obs))
}

/// Classical conformal set for one exchangeable test point: state `i` is kept
/// when its rank among the calibration scores together with `A(i, y)` is at
/// most `⌈(1 - α)(T + 1)⌉`.
pub fn classical_predict<F>(
    calibration: &[Pair],
    test_obs: usize,
    n_states: usize,
    alpha: f64,
    score: F,
    rule: RankRule,
) -> Result<Vec<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    if calibration.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must lie strictly between 0 and 1"));
    }
    let calib: Vec<f64> = calibration.iter().map(|p| score(p.state, p.obs)).collect();
    let size = (calibration.len() + 1) as f64;
    // the product can land a few ulps above an integer
    let bound = libm::ceil((1.0 - alpha) * size - 1e-9);
    let mut kept = Vec::new();
    for state in 0..n_states {
        let candidate = score(state, test_obs);
        let below = calib
            .iter()
            .filter(|&&s| match rule {
                RankRule::TiesIncluded => s < candidate,
                RankRule::TiesCounted => s <= candidate,
            })
            .count();
        if (below + 1) as f64 <= bound {
            kept.push(state);
        }
    }
    Ok(kept)
}
