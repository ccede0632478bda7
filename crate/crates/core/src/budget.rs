use crate::error::{Error, Result};

/// Upper bound on the number of candidates an exhaustive routine may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(pub u64);

impl Budget {
    pub const DEFAULT: Budget = Budget(10_000_000);

    /// Reads `SCHEDSEC_BUDGET`, falling back to [`Budget::DEFAULT`].
    pub fn from_env() -> Result<Self> {
        match std::env::var("SCHEDSEC_BUDGET") {
            Ok(raw) => raw
                .trim()
                .parse::<u64>()
                .map(Budget)
                .map_err(|_| Error::invalid(format!("SCHEDSEC_BUDGET is not an integer: {raw:?}"))),
            Err(_) => Ok(Self::DEFAULT),
        }
    }

    pub(crate) fn check(self, required: u128, hint: &'static str) -> Result<()> {
        if required > self.0 as u128 {
            Err(Error::Budget {
                required,
                budget: self.0,
                hint,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// `base^exp` saturating at `u128::MAX`.
pub(crate) fn pow_saturating(base: usize, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
    }
    acc
}
