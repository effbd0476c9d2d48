//! Simulation models used in the coverage experiments.

use alloc::vec;

use crate::error::{Error, Result};
use crate::hmm::{validate_params, HmmParams};

/// Transition values of the two-state grid.
pub const TWO_STATE_P_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
/// Emission values of the two-state grid.
pub const TWO_STATE_B_GRID: [f64; 3] = [0.5, 0.75, 0.9];
/// Calibration lengths of the two-state grid.
pub const TWO_STATE_T_GRID: [usize; 3] = [50, 100, 200];
/// Horizons of the two-state grid.
pub const TWO_STATE_M_GRID: [usize; 3] = [1, 2, 3];
/// Emission values of the three-state grid.
pub const THREE_STATE_B_GRID: [f64; 3] = [1.0 / 3.0, 0.6, 0.9];
/// Calibration lengths of the three-state grid.
pub const THREE_STATE_T_GRID: [usize; 5] = [60, 90, 120, 150, 180];
/// Horizon of the three-state grid.
pub const THREE_STATE_HORIZON: usize = 3;

fn check_unit(v: f64, what: &'static str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(what))
    }
}

/// Symmetric two-state model: stay with probability `p`, report the true
/// state with probability `b`.
pub fn setup_two_state(p: f64, b: f64) -> Result<HmmParams> {
    check_unit(p, "p must lie in [0, 1]")?;
    check_unit(b, "b must lie in [0, 1]")?;
    validate_params(
        &[vec![p, 1.0 - p], vec![1.0 - p, p]],
        &[vec![b, 1.0 - b], vec![1.0 - b, b]],
    )
}

/// Three-state cyclic model; `iid` replaces the transition matrix by the
/// uniform one.
pub fn setup_three_state(b: f64, iid: bool) -> Result<HmmParams> {
    check_unit(b, "b must lie in [0, 1]")?;
    let transition = if iid {
        vec![vec![1.0 / 3.0; 3]; 3]
    } else {
        vec![vec![0.1, 0.6, 0.3], vec![0.3, 0.1, 0.6], vec![0.6, 0.3, 0.1]]
    };
    let off = (1.0 - b) / 2.0;
    let emission = vec![vec![b, off, off], vec![off, b, off], vec![off, off, b]];
    validate_params(&transition, &emission)
}
