//! One Monte-Carlo coverage trial: simulate, hide the last `m` states,
//! predict them, and check the truth against the set.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conformal::{analyse_candidate, predict_hmm, CandidateAnalysis, ConformalConfig};
use crate::error::{Error, Result};
use crate::hmm::{simulate, AugmentedSequence, HmmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub hit: bool,
    pub set_size: usize,
    /// Block count of the true extended sequence.
    pub blocks: usize,
    /// `|Π|` for the true extended sequence.
    pub permutations: u128,
}

/// A simulated calibration path, the following observations and the hidden
/// states behind them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialData {
    pub calibration: AugmentedSequence,
    pub test_obs: Vec<usize>,
    pub truth: Vec<usize>,
}

pub fn simulate_trial(params: &HmmParams, calibration_len: usize, horizon: usize, seed: u64) -> Result<TrialData> {
    if calibration_len < 2 {
        return Err(Error::InvalidParameter("calibration length must be at least 2"));
    }
    let full = simulate(params, calibration_len + horizon, seed)?;
    let (calib, test) = full.pairs().split_at(calibration_len);
    Ok(TrialData {
        calibration: AugmentedSequence::new(calib.to_vec())?,
        test_obs: test.iter().map(|p| p.obs).collect(),
        truth: test.iter().map(|p| p.state).collect(),
    })
}

pub fn run_trial(
    params: &HmmParams,
    calibration_len: usize,
    config: &ConformalConfig,
    seed: u64,
) -> Result<TrialRecord> {
    let data = simulate_trial(params, calibration_len, config.horizon, seed)?;
    let set = predict_hmm(
        &data.calibration,
        &data.test_obs,
        params.n_states(),
        params.n_obs(),
        config,
    )?;
    let truth = set
        .candidate(&data.truth)
        .ok_or(Error::Shape("true sequence missing from the candidate list"))?;
    Ok(TrialRecord {
        hit: truth.member,
        set_size: set.len(),
        blocks: truth.blocks,
        permutations: truth.permutations,
    })
}

/// Analysis of the true candidate only; used to study the rank of the
/// unpermuted score.
pub fn true_candidate_analysis(
    params: &HmmParams,
    calibration_len: usize,
    config: &ConformalConfig,
    seed: u64,
) -> Result<CandidateAnalysis> {
    let data = simulate_trial(params, calibration_len, config.horizon, seed)?;
    analyse_candidate(
        &data.calibration,
        &data.test_obs,
        &data.truth,
        params.n_states(),
        params.n_obs(),
        config,
    )
}
