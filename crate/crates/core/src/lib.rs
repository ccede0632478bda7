//! Remote state estimation over a shared collision channel.
//!
//! The crate covers the full pipeline: steady-state Kalman quantities for each
//! process ([`lti_estimation`]), periodic collision-free schedules and their
//! exact average cost ([`scheduling`]), cyclic clock-shift attacks including a
//! branch-and-bound search for the cheapest blocking attack ([`attack`]),
//! shift-invariant policy sets with closed-form cost bounds
//! ([`protocol_sequences`]), and covariance / Monte Carlo simulation
//! ([`simulation`]).
//!
//! Sensor indices are zero-based throughout.

pub mod attack;
pub mod budget;
pub mod error;
pub mod lp;
pub mod lti_estimation;
pub mod protocol_sequences;
pub mod scheduling;
pub mod simulation;
pub mod systems_io;

pub use budget::Budget;
pub use error::{Error, Result};

/// One period of a binary transmission or reception pattern.
pub type BinarySeq = Vec<u8>;

pub(crate) fn check_binary(seq: &[u8], what: &str) -> Result<()> {
    if let Some(pos) = seq.iter().position(|&b| b > 1) {
        return Err(Error::invalid(format!(
            "{what}: entry {pos} is {}, expected 0 or 1",
            seq[pos]
        )));
    }
    Ok(())
}
