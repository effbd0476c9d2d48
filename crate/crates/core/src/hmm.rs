//! Discrete hidden Markov models.
//!
//! States and observations are 0-based indices. `transition(i, j)` is
//! `Pr(x_{t+1} = j | x_t = i)` and `emission(i, j)` is `Pr(y_t = j | x_t = i)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, MatrixKind, Result};
use crate::rng::rng_from_seed;

/// Row-sum tolerance for user-supplied matrices.
pub const CONSTRUCTION_TOLERANCE: f64 = 1e-12;
/// Row-sum tolerance for vectors produced by arithmetic.
pub const ARITHMETIC_TOLERANCE: f64 = 1e-10;
/// Longest observation string the path-enumeration oracle accepts.
pub const BRUTE_FORCE_MAX_STEPS: usize = 10;

/// One element of an augmented sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub state: usize,
    pub obs: usize,
}

impl Pair {
    pub const fn new(state: usize, obs: usize) -> Self {
        Self { state, obs }
    }
}

/// Transition and emission matrices of a discrete HMM, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    n_states: usize,
    n_obs: usize,
    transition: Vec<f64>,
    emission: Vec<f64>,
}

impl HmmParams {
    /// Builds parameters from rows, checking shape, range and row sums.
    pub fn new(transition: &[Vec<f64>], emission: &[Vec<f64>]) -> Result<Self> {
        validate_params(transition, emission)
    }

    /// Skips validation; callers guarantee stochastic rows.
    pub(crate) fn from_flat(n_states: usize, n_obs: usize, transition: Vec<f64>, emission: Vec<f64>) -> Self {
        debug_assert_eq!(transition.len(), n_states * n_states);
        debug_assert_eq!(emission.len(), n_states * n_obs);
        Self {
            n_states,
            n_obs,
            transition,
            emission,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n_states + to]
    }

    #[inline]
    pub fn emission(&self, state: usize, obs: usize) -> f64 {
        self.emission[state * self.n_obs + obs]
    }

    pub fn transition_row(&self, from: usize) -> &[f64] {
        &self.transition[from * self.n_states..(from + 1) * self.n_states]
    }

    pub fn emission_row(&self, state: usize) -> &[f64] {
        &self.emission[state * self.n_obs..(state + 1) * self.n_obs]
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        self.transition.chunks(self.n_states).map(<[f64]>::to_vec).collect()
    }

    pub fn emission_rows(&self) -> Vec<Vec<f64>> {
        self.emission.chunks(self.n_obs).map(<[f64]>::to_vec).collect()
    }
}

/// Checks that `transition` is square, `emission` has a row per state, and
/// that every row of both is a probability distribution.
pub fn validate_params(transition: &[Vec<f64>], emission: &[Vec<f64>]) -> Result<HmmParams> {
    let n = transition.len();
    if n == 0 {
        return Err(Error::Shape("transition matrix has no rows"));
    }
    if transition.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("transition matrix is not square"));
    }
    if emission.len() != n {
        return Err(Error::Shape("emission matrix row count differs from state count"));
    }
    let m = emission[0].len();
    if m == 0 {
        return Err(Error::Shape("emission matrix has no columns"));
    }
    if emission.iter().any(|row| row.len() != m) {
        return Err(Error::Shape("emission matrix rows have unequal lengths"));
    }
    check_rows(MatrixKind::Transition, transition)?;
    check_rows(MatrixKind::Emission, emission)?;
    Ok(HmmParams::from_flat(
        n,
        m,
        transition.iter().flatten().copied().collect(),
        emission.iter().flatten().copied().collect(),
    ))
}

fn check_rows(matrix: MatrixKind, rows: &[Vec<f64>]) -> Result<()> {
    for (row, values) in rows.iter().enumerate() {
        for (col, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::NegativeEntry {
                    matrix,
                    row,
                    col,
                    value,
                });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > CONSTRUCTION_TOLERANCE {
            return Err(Error::RowSum { matrix, row, sum });
        }
    }
    Ok(())
}

/// A path of `(state, observation)` pairs; the augmented chain of an HMM.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedSequence {
    pairs: Vec<Pair>,
}

impl AugmentedSequence {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        Ok(Self { pairs })
    }

    /// Zips equal-length state and observation lists.
    pub fn from_parts(states: &[usize], observations: &[usize]) -> Result<Self> {
        if states.len() != observations.len() {
            return Err(Error::Shape("state and observation lists differ in length"));
        }
        Self::new(
            states
                .iter()
                .zip(observations)
                .map(|(&s, &o)| Pair::new(s, o))
                .collect(),
        )
    }

    /// Checks every index against the state and observation counts.
    pub fn check_bounds(&self, n_states: usize, n_obs: usize) -> Result<()> {
        for (position, pair) in self.pairs.iter().enumerate() {
            if pair.state >= n_states {
                return Err(Error::IndexOutOfRange {
                    position,
                    index: pair.state,
                    limit: n_states,
                });
            }
            if pair.obs >= n_obs {
                return Err(Error::IndexOutOfRange {
                    position,
                    index: pair.obs,
                    limit: n_obs,
                });
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<Pair> {
        self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn first(&self) -> Pair {
        self.pairs[0]
    }

    pub fn last(&self) -> Pair {
        self.pairs[self.pairs.len() - 1]
    }

    pub fn states(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.state).collect()
    }

    pub fn observations(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.obs).collect()
    }
}

impl Index<usize> for AugmentedSequence {
    type Output = Pair;

    fn index(&self, index: usize) -> &Pair {
        &self.pairs[index]
    }
}

/// Posterior distribution over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Accepts nonnegative entries summing to one within 1e-10.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Shape("probability vector is empty"));
        }
        if p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("probability vector has a negative entry"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ARITHMETIC_TOLERANCE {
            return Err(Error::InvalidParameter("probability vector does not sum to 1"));
        }
        Ok(Self(p))
    }

    pub fn indicator(len: usize, at: usize) -> Self {
        let mut p = vec![0.0; len];
        p[at] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Uniform draw in [0, 1) with 53 bits of precision.
fn unit<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Inverse-CDF draw from a probability row.
fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u = unit(rng);
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // roundoff: fall back to the last index with positive mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Simulates `length` steps of the HMM with a uniformly chosen first state.
///
/// Draw order is `x_1, y_1, x_2, y_2, ...`, each from one uniform variate of a
/// ChaCha8 stream seeded with `seed`.
pub fn simulate(params: &HmmParams, length: usize, seed: u64) -> Result<AugmentedSequence> {
    if length == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut rng = rng_from_seed(seed);
    let n = params.n_states();
    let mut state = ((unit(&mut rng) * n as f64) as usize).min(n - 1);
    let mut pairs = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            state = sample_row(params.transition_row(state), &mut rng);
        }
        let obs = sample_row(params.emission_row(state), &mut rng);
        pairs.push(Pair::new(state, obs));
    }
    AugmentedSequence::new(pairs)
}

/// Transition and emission counts of a path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    pub n_states: usize,
    pub n_obs: usize,
    /// `transitions[i * n + j]`: number of `t < L` with `x_t = i, x_{t+1} = j`.
    pub transitions: Vec<u64>,
    /// `emissions[i * m + j]`: number of `t` with `x_t = i, y_t = j`.
    pub emissions: Vec<u64>,
}

impl Counts {
    pub fn from_pairs(pairs: &[Pair], n_states: usize, n_obs: usize) -> Result<Self> {
        let mut counts = Self {
            n_states,
            n_obs,
            transitions: vec![0; n_states * n_states],
            emissions: vec![0; n_states * n_obs],
        };
        for (position, pair) in pairs.iter().enumerate() {
            if pair.state >= n_states {
                return Err(Error::IndexOutOfRange {
                    position,
                    index: pair.state,
                    limit: n_states,
                });
            }
            if pair.obs >= n_obs {
                return Err(Error::IndexOutOfRange {
                    position,
                    index: pair.obs,
                    limit: n_obs,
                });
            }
            counts.emissions[pair.state * n_obs + pair.obs] += 1;
        }
        for w in pairs.windows(2) {
            counts.transitions[w[0].state * n_states + w[1].state] += 1;
        }
        Ok(counts)
    }

    /// Row-normalized counts; rows without data become uniform.
    pub fn to_params(&self) -> HmmParams {
        HmmParams::from_flat(
            self.n_states,
            self.n_obs,
            normalize_rows(&self.transitions, self.n_states),
            normalize_rows(&self.emissions, self.n_obs),
        )
    }
}

fn normalize_rows(counts: &[u64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(counts.len());
    for row in counts.chunks(width) {
        let total: u64 = row.iter().sum();
        if total == 0 {
            out.extend(core::iter::repeat_n(1.0 / width as f64, width));
        } else {
            out.extend(row.iter().map(|&c| c as f64 / total as f64));
        }
    }
    out
}

/// Count estimates of the transition and emission matrices.
///
/// `P̂[i][j]` is the share of visits to `i` (among the first `L - 1` positions)
/// followed by `j`; `B̂[i][j]` is the share of visits to `i` emitting `j`.
/// Rows for states without visits are uniform.
pub fn estimate_params(seq: &AugmentedSequence, n_states: usize, n_obs: usize) -> Result<HmmParams> {
    if seq.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: seq.len(),
        });
    }
    Ok(Counts::from_pairs(seq.pairs(), n_states, n_obs)?.to_params())
}

fn check_filter_inputs(params: &HmmParams, start: usize, observations: &[usize]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if start >= params.n_states() {
        return Err(Error::IndexOutOfRange {
            position: 0,
            index: start,
            limit: params.n_states(),
        });
    }
    if let Some((position, &index)) = observations.iter().enumerate().find(|(_, &y)| y >= params.n_obs()) {
        return Err(Error::IndexOutOfRange {
            position,
            index,
            limit: params.n_obs(),
        });
    }
    Ok(())
}

/// One step of the filter: `next ∝ diag(B[:, obs]) · Pᵀ · prev`.
///
/// Returns `false` if the normalizer is zero; `next` is then unspecified.
#[inline]
pub(crate) fn filter_step(params: &HmmParams, prev: &[f64], obs: usize, next: &mut [f64]) -> bool {
    let n = params.n_states();
    let mut norm = 0.0;
    for j in 0..n {
        let mut predicted = 0.0;
        for (i, &p) in prev.iter().enumerate() {
            predicted += params.transition[i * n + j] * p;
        }
        let v = params.emission(j, obs) * predicted;
        next[j] = v;
        norm += v;
    }
    if !(norm > 0.0) {
        return false;
    }
    for v in next.iter_mut() {
        *v /= norm;
    }
    true
}

/// Filtered posteriors `Pr(x_{T+k} = · | x_T = start; y_{T+1..T+k})` for
/// `k = 1..=observations.len()`.
pub fn filter_posteriors(params: &HmmParams, start: usize, observations: &[usize]) -> Result<Vec<ProbVector>> {
    check_filter_inputs(params, start, observations)?;
    let n = params.n_states();
    let mut prev = vec![0.0; n];
    prev[start] = 1.0;
    let mut out = Vec::with_capacity(observations.len());
    for (k, &y) in observations.iter().enumerate() {
        let mut next = vec![0.0; n];
        if !filter_step(params, &prev, y, &mut next) {
            return Err(Error::DegenerateLikelihood { step: k + 1 });
        }
        out.push(ProbVector(next.clone()));
        prev = next;
    }
    Ok(out)
}

/// Same quantity as [`filter_posteriors`], by summing the probability of every
/// hidden path of each prefix length. Exponential in the number of steps.
pub fn brute_force_posterior(params: &HmmParams, start: usize, observations: &[usize]) -> Result<Vec<ProbVector>> {
    check_filter_inputs(params, start, observations)?;
    let steps = observations.len();
    let n = params.n_states();
    if steps > BRUTE_FORCE_MAX_STEPS {
        return Err(Error::PathExplosion {
            paths: (n as u128).saturating_pow(steps as u32),
        });
    }
    let mut out = Vec::with_capacity(steps);
    let mut path = vec![0usize; steps];
    for k in 1..=steps {
        let mut mass = vec![0.0; n];
        let total_paths = n.pow(k as u32);
        for code in 0..total_paths {
            let mut c = code;
            for slot in path[..k].iter_mut().rev() {
                *slot = c % n;
                c /= n;
            }
            let mut weight = 1.0;
            let mut prev = start;
            for (t, &x) in path[..k].iter().enumerate() {
                weight *= params.transition(prev, x) * params.emission(x, observations[t]);
                prev = x;
            }
            mass[path[k - 1]] += weight;
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateLikelihood { step: k });
        }
        out.push(ProbVector(mass.into_iter().map(|w| w / total).collect()));
    }
    Ok(out)
}
