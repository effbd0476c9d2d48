//! Turning real-valued series into state sequences.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{AugmentedSequence, Pair};

/// Bins over z-scores. Bin `k` is `[cut[k-1], cut[k])`, with open ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationScheme {
    cut_points: Vec<f64>,
}

impl QuantizationScheme {
    pub fn new(cut_points: Vec<f64>) -> Result<Self> {
        if cut_points.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("cut points must be finite"));
        }
        if cut_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("cut points must be strictly increasing"));
        }
        Ok(Self { cut_points })
    }

    /// Unit-width bands centered on the mean: cuts at ±0.5, ±1.5, … for an
    /// odd count, at 0, ±1, ±2, … for an even one. Five states give
    /// `[-1.5, -0.5, 0.5, 1.5]`.
    pub fn sigma_bands(n_states: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidParameter("state count must be positive"));
        }
        let half = (n_states as f64 - 2.0) / 2.0;
        Self::new((0..n_states - 1).map(|k| k as f64 - half).collect())
    }

    pub fn n_states(&self) -> usize {
        self.cut_points.len() + 1
    }

    pub fn cut_points(&self) -> &[f64] {
        &self.cut_points
    }

    pub fn bin(&self, z: f64) -> usize {
        self.cut_points.partition_point(|&c| c <= z)
    }
}

/// Bins every value by its z-score under the population standard deviation.
/// A constant series maps to the middle bin.
pub fn quantize(values: &[f64], scheme: &QuantizationScheme) -> Result<Vec<usize>> {
    if values.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: values.len(),
        });
    }
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    let std = libm::sqrt(var);
    if std == 0.0 {
        return Ok(alloc::vec![scheme.n_states() / 2; values.len()]);
    }
    Ok(values.iter().map(|v| scheme.bin((v - mean) / std)).collect())
}

/// 1 for a gain or an unchanged value, 0 for a loss; one shorter than the input.
pub fn sign_states(values: &[f64]) -> Result<Vec<usize>> {
    if values.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: values.len(),
        });
    }
    Ok(values.windows(2).map(|w| usize::from(w[1] >= w[0])).collect())
}

/// Pairs each state with its predecessor as the observation:
/// `(states[t], states[t-1])` for `t ≥ 1`.
pub fn to_lagged_hmm(states: &[usize]) -> Result<AugmentedSequence> {
    if states.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: states.len(),
        });
    }
    AugmentedSequence::new(states.windows(2).map(|w| Pair::new(w[1], w[0])).collect())
}
