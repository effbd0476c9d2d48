//! Rolling one-step-ahead evaluation on a discretized series.
//!
//! Each state is predicted from the state before it: the series becomes the
//! lagged HMM `(x_t, y_t) = (s_t, s_{t-1})`, and at every test time the
//! prediction engine is calibrated on the pairs that precede it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conformal::{predict_hmm, ConformalConfig};
use crate::error::{Error, Result};
use crate::exchangeability::{PermutationBudget, TerminalBlock};
use crate::hmm::{AugmentedSequence, Pair};

/// Which past pairs calibrate a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// The `T` most recent pairs.
    #[default]
    Rolling,
    /// Every pair since the start of the series.
    Expanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub calibration_len: usize,
    pub alpha: f64,
    pub window: WindowMode,
    pub budget: PermutationBudget,
    pub terminal: TerminalBlock,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(calibration_len: usize, alpha: f64) -> Self {
        Self {
            calibration_len,
            alpha,
            window: WindowMode::Rolling,
            budget: PermutationBudget::Unlimited,
            terminal: TerminalBlock::Fixed,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestRecord {
    /// Index of the predicted state in the input list.
    pub t: usize,
    pub true_state: usize,
    pub members: Vec<usize>,
    pub set_size: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub n_states: usize,
    pub calibration_len: usize,
    pub alpha: f64,
    pub window: WindowMode,
    pub coverage: f64,
    /// Mean set size divided by the number of states.
    pub scaled_set_size: f64,
    pub records: Vec<BacktestRecord>,
}

/// Predicts `states[t]` for every `t` from `T + 1` to the end.
pub fn backtest(states: &[usize], n_states: usize, config: &BacktestConfig) -> Result<BacktestReport> {
    let big_t = config.calibration_len;
    if big_t < 2 {
        return Err(Error::InvalidParameter("calibration length must be at least 2"));
    }
    if states.len() < big_t + 2 {
        return Err(Error::TooShort {
            needed: big_t + 2,
            got: states.len(),
        });
    }
    if let Some((position, &index)) = states.iter().enumerate().find(|(_, &s)| s >= n_states) {
        return Err(Error::IndexOutOfRange {
            position,
            index,
            limit: n_states,
        });
    }
    let conformal = ConformalConfig::new(config.alpha, 1)?
        .with_budget(config.budget)
        .with_terminal(config.terminal)
        .with_seed(config.seed);
    // lagged[i] pairs states[i + 1] with states[i]
    let lagged: Vec<Pair> = states.windows(2).map(|w| Pair::new(w[1], w[0])).collect();
    let mut records = Vec::with_capacity(states.len() - big_t - 1);
    for t in big_t + 1..states.len() {
        let start = match config.window {
            WindowMode::Rolling => t - big_t - 1,
            WindowMode::Expanding => 0,
        };
        // pairs up to lagged[t - 2] involve states before t only
        let calibration = AugmentedSequence::new(lagged[start..t - 1].to_vec())?;
        let set = predict_hmm(&calibration, &[states[t - 1]], n_states, n_states, &conformal)?;
        let members: Vec<usize> = set.members().map(|c| c[0]).collect();
        let hit = members.contains(&states[t]);
        records.push(BacktestRecord {
            t,
            true_state: states[t],
            set_size: members.len(),
            members,
            hit,
        });
    }
    let count = records.len() as f64;
    let coverage = records.iter().filter(|r| r.hit).count() as f64 / count;
    let mean_size = records.iter().map(|r| r.set_size as f64).sum::<f64>() / count;
    Ok(BacktestReport {
        n_states,
        calibration_len: big_t,
        alpha: config.alpha,
        window: config.window,
        coverage,
        scaled_set_size: mean_size / n_states as f64,
        records,
    })
}
