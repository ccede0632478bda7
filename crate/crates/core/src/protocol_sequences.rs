//! Shift-invariant transmission policy sets.
//!
//! A policy set is shift invariant when, for every ascending sensor tuple `U`,
//! the number of slots per period in which all members of `U` transmit does
//! not depend on their clock offsets. Under such a set every sensor receives
//! the same number of packets per period whatever offsets an attacker injects,
//! which is what bounds the estimation cost from above.
//!
//! Duty factors, throughputs and counts are exact rationals; floating point
//! only appears once trace ladders enter in [`bounds`].

use num_integer::Integer;
use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{shift_unchecked, shifted_rows};
use crate::budget::{pow_saturating, Budget};
use crate::error::{Error, Result};
use crate::lti_estimation::SteadyState;
use crate::scheduling::{collision_reception, duty_factor, Schedule};
use crate::{check_binary, BinarySeq};

/// Largest period the constructor will materialize.
pub const MAX_PERIOD: u64 = 10_000_000;

/// Duty factor `n/d` in lowest terms with `0 < n < d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFactor")]
pub struct RationalDutyFactor {
    n: u64,
    d: u64,
}

#[derive(Deserialize)]
struct RawFactor {
    n: u64,
    d: u64,
}

impl TryFrom<RawFactor> for RationalDutyFactor {
    type Error = Error;
    fn try_from(raw: RawFactor) -> Result<Self> {
        RationalDutyFactor::new(raw.n, raw.d)
    }
}

impl RationalDutyFactor {
    pub fn new(n: u64, d: u64) -> Result<Self> {
        if n == 0 || n >= d {
            return Err(Error::invalid(format!("duty factor {n}/{d} must satisfy 0 < n < d")));
        }
        if n.gcd(&d) != 1 {
            return Err(Error::invalid(format!("duty factor {n}/{d} is not in lowest terms")));
        }
        Ok(RationalDutyFactor { n, d })
    }

    pub fn from_ratio(r: Ratio<u64>) -> Result<Self> {
        Self::new(*r.numer(), *r.denom())
    }

    pub fn numer(&self) -> u64 {
        self.n
    }

    pub fn denom(&self) -> u64 {
        self.d
    }

    pub fn as_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.n, self.d)
    }
}

/// Duty factors of the rows of a schedule; every factor must lie strictly between 0 and 1.
pub fn factors_of_schedule(sched: &Schedule) -> Result<Vec<RationalDutyFactor>> {
    sched
        .rows()
        .iter()
        .map(|r| RationalDutyFactor::from_ratio(duty_factor(r)?))
        .collect()
}

/// Policies of common period `D` annotated with their duty factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicySet")]
pub struct PolicySet {
    #[serde(rename = "T")]
    period: usize,
    rows: Vec<BinarySeq>,
    factors: Vec<RationalDutyFactor>,
}

#[derive(Deserialize)]
struct RawPolicySet {
    #[serde(rename = "T")]
    period: usize,
    rows: Vec<BinarySeq>,
    factors: Vec<RationalDutyFactor>,
}

impl TryFrom<RawPolicySet> for PolicySet {
    type Error = Error;
    fn try_from(raw: RawPolicySet) -> Result<Self> {
        let ps = PolicySet::new(raw.rows, raw.factors)?;
        if ps.period != raw.period {
            return Err(Error::invalid(format!(
                "declared period {} does not match row length {}",
                raw.period, ps.period
            )));
        }
        Ok(ps)
    }
}

impl PolicySet {
    pub fn new(rows: Vec<BinarySeq>, factors: Vec<RationalDutyFactor>) -> Result<Self> {
        let sched = Schedule::new(rows)?;
        if factors.len() != sched.num_sensors() {
            return Err(Error::invalid(format!(
                "{} duty factors for {} rows",
                factors.len(),
                sched.num_sensors()
            )));
        }
        let period = sched.period() as u64;
        let product = factors
            .iter()
            .try_fold(1u64, |acc, f| acc.checked_mul(f.d))
            .ok_or_else(|| Error::invalid("product of denominators overflows"))?;
        if !period.is_multiple_of(product) {
            return Err(Error::invalid(format!(
                "period {period} is not divisible by the denominator product {product}"
            )));
        }
        for (i, (row, f)) in sched.rows().iter().zip(&factors).enumerate() {
            let weight = row.iter().filter(|&&b| b == 1).count() as u64;
            if weight * f.d != period * f.n {
                return Err(Error::invalid(format!(
                    "row {i} has weight {weight}, expected {}",
                    period * f.n / f.d
                )));
            }
        }
        Ok(PolicySet {
            period: period as usize,
            rows: sched.rows().to_vec(),
            factors,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn rows(&self) -> &[BinarySeq] {
        &self.rows
    }

    pub fn factors(&self) -> &[RationalDutyFactor] {
        &self.factors
    }

    pub fn num_sensors(&self) -> usize {
        self.rows.len()
    }

    pub fn to_schedule(&self) -> Schedule {
        Schedule::new(self.rows.clone()).expect("policy rows are a valid schedule")
    }
}

fn check_tuple(ps: &PolicySet, sensors: &[usize], shifts: &[usize]) -> Result<()> {
    if sensors.is_empty() {
        return Err(Error::invalid("sensor tuple is empty"));
    }
    if sensors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("sensor tuple {sensors:?} is not strictly ascending")));
    }
    if let Some(&bad) = sensors.iter().find(|&&i| i >= ps.num_sensors()) {
        return Err(Error::invalid(format!("sensor {bad} out of range")));
    }
    if shifts.len() != sensors.len() {
        return Err(Error::invalid("one shift per tuple member is required"));
    }
    if let Some(&bad) = shifts.iter().find(|&&t| t >= ps.period) {
        return Err(Error::invalid(format!("shift {bad} outside 0..{}", ps.period)));
    }
    Ok(())
}

fn correlation_unchecked(rows: &[BinarySeq], sensors: &[usize], shifts: &[usize]) -> usize {
    let d = rows[0].len();
    (0..d)
        .filter(|&k| {
            sensors
                .iter()
                .zip(shifts)
                .all(|(&i, &t)| rows[i][(k + t) % d] == 1)
        })
        .count()
}

/// Slots per period in which every sensor of `sensors` transmits.
pub fn hamming_cross_correlation(ps: &PolicySet, sensors: &[usize], shifts: &[usize]) -> Result<usize> {
    check_tuple(ps, sensors, shifts)?;
    Ok(correlation_unchecked(&ps.rows, sensors, shifts))
}

/// Fraction of slots in which `sensors[position]` transmits while the rest of the tuple is silent.
pub fn throughput(ps: &PolicySet, sensors: &[usize], shifts: &[usize], position: usize) -> Result<Ratio<u64>> {
    check_tuple(ps, sensors, shifts)?;
    if position >= sensors.len() {
        return Err(Error::invalid(format!("position {position} outside the tuple")));
    }
    let d = ps.period;
    let alone = (0..d)
        .filter(|&k| {
            sensors.iter().zip(shifts).enumerate().all(|(p, (&i, &t))| {
                let on = ps.rows[i][(k + t) % d] == 1;
                if p == position {
                    on
                } else {
                    !on
                }
            })
        })
        .count();
    Ok(Ratio::new(alone as u64, d as u64))
}

/// All nonempty ascending sensor tuples, by size and then lexicographically.
pub fn sensor_tuples(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=n {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(combo.clone());
            let Some(pos) = (0..size).rev().find(|&p| combo[p] < n - size + p) else {
                break;
            };
            combo[pos] += 1;
            for q in pos + 1..size {
                combo[q] = combo[q - 1] + 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvarianceWitness {
    pub sensors: Vec<usize>,
    pub shifts: Vec<usize>,
    pub value: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvarianceReport {
    pub invariant: bool,
    /// `false` when the verdict rests on sampled tuples only.
    pub proven: bool,
    pub tuples_checked: u64,
    pub witness: Option<InvarianceWitness>,
}

fn first_violation<I>(rows: &[BinarySeq], sensors: &[usize], tuples: I) -> (u64, Option<InvarianceWitness>)
where
    I: Iterator<Item = Vec<usize>>,
{
    let expected = correlation_unchecked(rows, sensors, &vec![0; sensors.len()]);
    let mut checked = 0;
    for shifts in tuples {
        checked += 1;
        let value = correlation_unchecked(rows, sensors, &shifts);
        if value != expected {
            return (
                checked,
                Some(InvarianceWitness {
                    sensors: sensors.to_vec(),
                    shifts,
                    value,
                    expected,
                }),
            );
        }
    }
    (checked, None)
}

/// Shift tuples with the first entry pinned to zero, in lexicographic order.
///
/// A common offset only rotates the summation index of the cyclic
/// correlation sum, so pinning the first shift loses nothing.
fn pinned_tuples(len: usize, period: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = pow_saturating(period, len - 1) as u64;
    (0..total).map(move |mut code| {
        let mut shifts = vec![0usize; len];
        for slot in shifts[1..].iter_mut().rev() {
            *slot = (code % period as u64) as usize;
            code /= period as u64;
        }
        shifts
    })
}

fn aggregate(results: Vec<(u64, Option<InvarianceWitness>)>, proven: bool) -> InvarianceReport {
    let tuples_checked = results.iter().map(|r| r.0).sum();
    let witness = results.into_iter().find_map(|r| r.1);
    InvarianceReport {
        invariant: witness.is_none(),
        proven,
        tuples_checked,
        witness,
    }
}

/// Exhaustive shift-invariance check; the smallest violating tuple is reported.
pub fn is_shift_invariant(ps: &PolicySet, budget: Budget) -> Result<InvarianceReport> {
    let d = ps.period;
    let n = ps.num_sensors();
    if n > 20 {
        return Err(Error::invalid("exhaustive verification supports at most 20 sensors"));
    }
    budget.check(pow_saturating(d, n - 1), "use sample_shift_invariance instead")?;
    let results = sensor_tuples(n)
        .par_iter()
        .map(|u| first_violation(&ps.rows, u, pinned_tuples(u.len(), d)))
        .collect();
    Ok(aggregate(results, true))
}

/// Seeded sampling variant of [`is_shift_invariant`]; never claims a proof.
pub fn sample_shift_invariance(ps: &PolicySet, samples_per_tuple: usize, seed: u64) -> Result<InvarianceReport> {
    let d = ps.period;
    let n = ps.num_sensors();
    if n > 20 {
        return Err(Error::invalid("sampled verification supports at most 20 sensors"));
    }
    let results = sensor_tuples(n)
        .par_iter()
        .enumerate()
        .map(|(idx, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let tuples: Vec<Vec<usize>> = (0..samples_per_tuple)
                .map(|_| {
                    let mut s: Vec<usize> = (0..u.len()).map(|_| rng.random_range(0..d)).collect();
                    s[0] = 0;
                    s
                })
                .collect();
            first_violation(&ps.rows, u, tuples.into_iter())
        })
        .collect();
    Ok(aggregate(results, false))
}

/// Interleaving vectors `σ[i][j]`: `D_{i−1}` vectors of length `d_i` for sensor `i`.
pub type Sigma = Vec<Vec<BinarySeq>>;

fn block_counts(factors: &[RationalDutyFactor]) -> Result<Vec<u64>> {
    let mut prefix = Vec::with_capacity(factors.len());
    let mut acc: u64 = 1;
    for f in factors {
        prefix.push(acc);
        acc = acc
            .checked_mul(f.d)
            .filter(|&v| v <= MAX_PERIOD)
            .ok_or_else(|| Error::invalid(format!("period exceeds the construction limit {MAX_PERIOD}")))?;
    }
    Ok(prefix)
}

/// Default interleaving: `σ[i][j]` is the base vector with ones in its last
/// `n_i` positions, rotated by `j mod d_i`.
pub fn default_sigma(factors: &[RationalDutyFactor]) -> Result<Sigma> {
    let counts = block_counts(factors)?;
    Ok(factors
        .iter()
        .zip(counts)
        .map(|(f, count)| {
            let (n, d) = (f.n as usize, f.d as usize);
            let base: BinarySeq = (0..d).map(|k| u8::from(k >= d - n)).collect();
            (0..count as usize).map(|j| shift_unchecked(&base, j % d)).collect()
        })
        .collect())
}

/// Interleaving vectors with uniformly random support of the right weight.
pub fn random_sigma<R: Rng + ?Sized>(factors: &[RationalDutyFactor], rng: &mut R) -> Result<Sigma> {
    let counts = block_counts(factors)?;
    Ok(factors
        .iter()
        .zip(counts)
        .map(|(f, count)| {
            let (n, d) = (f.n as usize, f.d as usize);
            (0..count)
                .map(|_| {
                    let mut v = vec![0u8; d];
                    for k in sample(rng, d, n) {
                        v[k] = 1;
                    }
                    v
                })
                .collect()
        })
        .collect())
}

/// Builds the shift-invariant set for `factors` by interleaving.
///
/// Row `i` has native period `D_i = d_1⋯d_i`; position `r·D_{i−1} + j` carries
/// `σ[i][j](r)`. Rows are then repeated to the common period `D = D_N`.
pub fn construct_shift_invariant(factors: &[RationalDutyFactor], sigma: Option<&Sigma>) -> Result<PolicySet> {
    if factors.is_empty() {
        return Err(Error::invalid("need at least one duty factor"));
    }
    let counts = block_counts(factors)?;
    let default;
    let sigma = match sigma {
        Some(s) => s,
        None => {
            default = default_sigma(factors)?;
            &default
        }
    };
    if sigma.len() != factors.len() {
        return Err(Error::invalid(format!(
            "sigma covers {} sensors, expected {}",
            sigma.len(),
            factors.len()
        )));
    }
    let total: usize = factors.iter().map(|f| f.d as usize).product();
    let mut rows = Vec::with_capacity(factors.len());
    for (i, ((f, &count), vectors)) in factors.iter().zip(&counts).zip(sigma).enumerate() {
        let count = count as usize;
        if vectors.len() != count {
            return Err(Error::invalid(format!(
                "sensor {i} needs {count} interleaving vectors, got {}",
                vectors.len()
            )));
        }
        for (j, v) in vectors.iter().enumerate() {
            check_binary(v, &format!("sigma ({i},{j})"))?;
            let weight = v.iter().filter(|&&b| b == 1).count() as u64;
            if v.len() as u64 != f.d || weight != f.n {
                return Err(Error::invalid(format!(
                    "sigma ({i},{j}) must have length {} and weight {}, got length {} and weight {weight}",
                    f.d,
                    f.n,
                    v.len()
                )));
            }
        }
        let native: BinarySeq = (0..f.d as usize)
            .flat_map(|r| vectors.iter().map(move |v| v[r]))
            .collect();
        let row = native.iter().copied().cycle().take(total).collect();
        rows.push(row);
    }
    PolicySet::new(rows, factors.to_vec())
}

/// All duty factors `1/2`: the shortest achievable period `2^N`.
pub fn shortest_period_policies(num_sensors: usize) -> Result<PolicySet> {
    if num_sensors == 0 {
        return Err(Error::invalid("need at least one sensor"));
    }
    let half = RationalDutyFactor::new(1, 2)?;
    construct_shift_invariant(&vec![half; num_sensors], None)
}

/// Packets per period each sensor gets through under `shifts`.
pub fn reception_counts(ps: &PolicySet, shifts: &[usize]) -> Result<Vec<usize>> {
    if shifts.len() != ps.num_sensors() || shifts.iter().any(|&t| t >= ps.period) {
        return Err(Error::invalid("one in-range shift per sensor is required"));
    }
    Ok(collision_reception(&shifted_rows(&ps.rows, shifts))
        .iter()
        .map(|r| r.iter().filter(|&&b| b == 1).count())
        .collect())
}

/// Guaranteed receptions per period `N_i = n_i Π_{j≠i} (d_j − n_j)`.
pub fn guaranteed_receptions(factors: &[RationalDutyFactor]) -> Vec<u64> {
    (0..factors.len())
        .map(|i| {
            factors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(factors[i].n, |acc, (_, f)| acc * (f.d - f.n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub per_sensor_lower: Vec<f64>,
    pub per_sensor_upper: Vec<f64>,
    pub per_sensor_receptions: Vec<u64>,
    pub period: u64,
}

/// Closed-form cost bounds for a shift-invariant set with the given factors.
///
/// The lower bound spreads each sensor's `N_i` receptions as evenly as
/// possible over the period; the upper bound packs them back to back so one
/// gap of `D − N_i` idle slots remains.
pub fn bounds(factors: &[RationalDutyFactor], states: &[SteadyState]) -> Result<BoundsReport> {
    if factors.len() != states.len() {
        return Err(Error::invalid(format!(
            "{} duty factors for {} systems",
            factors.len(),
            states.len()
        )));
    }
    if factors.is_empty() {
        return Err(Error::invalid("need at least one duty factor"));
    }
    let period = factors
        .iter()
        .try_fold(1u64, |acc, f| acc.checked_mul(f.d))
        .ok_or_else(|| Error::invalid("period overflows"))?;
    let receptions = guaranteed_receptions(factors);
    let d = period as f64;
    let mut per_lower = Vec::with_capacity(factors.len());
    let mut per_upper = Vec::with_capacity(factors.len());
    for (&ni, st) in receptions.iter().zip(states) {
        let q = (period / ni) as usize;
        let rem = (period % ni) as f64;
        let longest = (period - ni) as usize;
        let ladder = st.traces_upto(q.max(longest));
        let n = ni as f64;
        let lower = n * ladder[..q].iter().sum::<f64>() + rem * ladder[q];
        let upper = n * ladder[0] + ladder[1..=longest].iter().sum::<f64>();
        per_lower.push(lower / d);
        per_upper.push(upper / d);
    }
    Ok(BoundsReport {
        lower: per_lower.iter().sum(),
        upper: per_upper.iter().sum(),
        per_sensor_lower: per_lower,
        per_sensor_upper: per_upper,
        per_sensor_receptions: receptions,
        period,
    })
}
