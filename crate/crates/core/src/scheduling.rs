//! Periodic transmission schedules over the collision channel and their exact
//! infinite-horizon average cost.
//!
//! A schedule stores one period of each sensor's 0/1 transmission pattern.
//! A slot delivers a packet iff exactly one sensor transmits in it. Costs are
//! assembled from the cyclic reception-gap histogram of each sensor and its
//! trace ladder, so no simulation is involved.

use std::cmp::Ordering;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::budget::{pow_saturating, Budget};
use crate::error::{Error, Result};
use crate::lti_estimation::SteadyState;
use crate::{check_binary, BinarySeq};

/// `N` binary rows sharing the period `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct Schedule {
    #[serde(rename = "T")]
    period: usize,
    rows: Vec<BinarySeq>,
}

#[derive(Deserialize)]
struct RawSchedule {
    #[serde(rename = "T")]
    period: usize,
    rows: Vec<BinarySeq>,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        let sched = Schedule::new(raw.rows)?;
        if sched.period != raw.period {
            return Err(Error::invalid(format!(
                "declared period {} does not match row length {}",
                raw.period, sched.period
            )));
        }
        Ok(sched)
    }
}

impl Schedule {
    pub fn new(rows: Vec<BinarySeq>) -> Result<Self> {
        let period = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("schedule needs at least one row"))?;
        if period == 0 {
            return Err(Error::invalid("schedule period must be positive"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != period {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {period}",
                    row.len()
                )));
            }
            check_binary(row, &format!("row {i}"))?;
        }
        Ok(Schedule { period, rows })
    }

    /// Builds the exclusive schedule in which slot `k` belongs to sensor `owners[k]`.
    pub fn from_owners(num_sensors: usize, owners: &[usize]) -> Result<Self> {
        if let Some(&bad) = owners.iter().find(|&&o| o >= num_sensors) {
            return Err(Error::invalid(format!("slot owner {bad} out of range")));
        }
        let rows = (0..num_sensors)
            .map(|i| owners.iter().map(|&o| u8::from(o == i)).collect())
            .collect();
        Schedule::new(rows)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn num_sensors(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[BinarySeq] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i]
    }

    /// Every slot has exactly one transmitting sensor.
    pub fn is_exclusive(&self) -> bool {
        (0..self.period).all(|k| self.rows.iter().map(|r| r[k] as usize).sum::<usize>() == 1)
    }

    pub fn require_exclusive(&self) -> Result<()> {
        if self.is_exclusive() {
            Ok(())
        } else {
            Err(Error::invalid("schedule is not exclusive (some slot has zero or several transmitters)"))
        }
    }

    /// Row-major concatenation of all rows.
    pub fn flattened(&self) -> Vec<u8> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Fraction of ones in one period, in lowest terms.
pub fn duty_factor(row: &[u8]) -> Result<Ratio<u64>> {
    if row.is_empty() {
        return Err(Error::invalid("duty factor of an empty sequence"));
    }
    check_binary(row, "sequence")?;
    let ones = row.iter().filter(|&&b| b == 1).count() as u64;
    Ok(Ratio::new(ones, row.len() as u64))
}

/// Cyclic lengths between consecutive ones (each interval counts the
/// reception slot plus the idle slots after it). Empty when there are no ones.
pub fn cyclic_intervals(row: &[u8]) -> Vec<usize> {
    let t = row.len();
    let ones: Vec<usize> = (0..t).filter(|&k| row[k] == 1).collect();
    match ones.len() {
        0 => Vec::new(),
        1 => vec![t],
        m => (0..m)
            .map(|j| {
                let next = ones[(j + 1) % m];
                (next + t - ones[j] - 1) % t + 1
            })
            .collect(),
    }
}

/// Ones spread as evenly as possible: cyclic intervals differ by at most one.
pub fn is_uniform(row: &[u8]) -> bool {
    let iv = cyclic_intervals(row);
    match (iv.iter().min(), iv.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo <= 1,
        _ => true,
    }
}

/// Count `a_t` of slots at which the sensor has gone `t` slots since its last
/// reception, read cyclically over one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum GapHistogram {
    Received { counts: Vec<usize> },
    NeverReceived { period: usize },
}

impl GapHistogram {
    /// `a_t`, zero past the longest gap.
    pub fn count(&self, t: usize) -> usize {
        match self {
            GapHistogram::Received { counts } => counts.get(t).copied().unwrap_or(0),
            GapHistogram::NeverReceived { .. } => 0,
        }
    }

    /// `a_0`, the number of receptions per period.
    pub fn received(&self) -> usize {
        self.count(0)
    }

    pub fn max_gap(&self) -> Option<usize> {
        match self {
            GapHistogram::Received { counts } => Some(counts.len() - 1),
            GapHistogram::NeverReceived { .. } => None,
        }
    }

    pub fn is_never_received(&self) -> bool {
        matches!(self, GapHistogram::NeverReceived { .. })
    }
}

pub fn gap_histogram(reception: &[u8]) -> Result<GapHistogram> {
    if reception.is_empty() {
        return Err(Error::invalid("reception sequence must have period >= 1"));
    }
    check_binary(reception, "reception")?;
    let intervals = cyclic_intervals(reception);
    let Some(&longest) = intervals.iter().max() else {
        return Ok(GapHistogram::NeverReceived {
            period: reception.len(),
        });
    };
    let mut counts = vec![0usize; longest];
    for len in intervals {
        for c in &mut counts[..len] {
            *c += 1;
        }
    }
    Ok(GapHistogram::Received { counts })
}

/// Average trace of one sensor, or divergence when it never receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Divergent,
}

impl Cost {
    pub fn value(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Divergent => None,
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, Cost::Divergent)
    }

    /// Total order with divergence above every finite value.
    pub fn total_cmp(&self, other: &Cost) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Divergent) => Ordering::Less,
            (Cost::Divergent, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Divergent, Cost::Divergent) => Ordering::Equal,
        }
    }
}

impl Serialize for Cost {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cost::Finite(v) => s.serialize_f64(*v),
            Cost::Divergent => s.serialize_str("divergent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub per_sensor: Vec<Cost>,
    pub total: Cost,
}

impl CostReport {
    pub fn from_per_sensor(per_sensor: Vec<Cost>) -> Self {
        let total = per_sensor
            .iter()
            .try_fold(0.0, |acc, c| c.value().map(|v| acc + v))
            .map_or(Cost::Divergent, Cost::Finite);
        CostReport { per_sensor, total }
    }
}

/// `(1/T) Σ_t a_t Tr[hᵗ(P̄)]` for one sensor.
pub fn sensor_cost(hist: &GapHistogram, state: &SteadyState) -> Cost {
    match hist {
        GapHistogram::NeverReceived { .. } => Cost::Divergent,
        GapHistogram::Received { counts } => {
            let period: usize = counts.iter().sum();
            let ladder = state.traces_upto(counts.len() - 1);
            let weighted: f64 = counts
                .iter()
                .zip(ladder.iter())
                .map(|(&a, &tr)| a as f64 * tr)
                .sum();
            Cost::Finite(weighted / period as f64)
        }
    }
}

/// Exact periodic average cost of per-sensor reception patterns.
pub fn average_cost(receptions: &[BinarySeq], states: &[SteadyState]) -> Result<CostReport> {
    if receptions.len() != states.len() {
        return Err(Error::invalid(format!(
            "{} reception sequences for {} systems",
            receptions.len(),
            states.len()
        )));
    }
    let period = receptions.first().map_or(0, Vec::len);
    if receptions.iter().any(|r| r.len() != period) {
        return Err(Error::invalid("reception sequences must share one period"));
    }
    let per_sensor = receptions
        .iter()
        .zip(states)
        .map(|(r, st)| Ok(sensor_cost(&gap_histogram(r)?, st)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostReport::from_per_sensor(per_sensor))
}

/// Collision rule on raw transmission rows: `λ_i(k) = s_i(k) Π_{j≠i} (1 − s_j(k))`.
pub fn collision_reception(rows: &[BinarySeq]) -> Vec<BinarySeq> {
    let period = rows.first().map_or(0, Vec::len);
    let load: Vec<usize> = (0..period)
        .map(|k| rows.iter().map(|r| r[k] as usize).sum())
        .collect();
    rows.iter()
        .map(|r| {
            (0..period)
                .map(|k| u8::from(r[k] == 1 && load[k] == 1))
                .collect()
        })
        .collect()
}

pub fn reception_from_schedule(sched: &Schedule) -> Vec<BinarySeq> {
    collision_reception(sched.rows())
}

struct Candidate {
    total: Cost,
    flat: Vec<u8>,
    period: usize,
    schedule: Schedule,
    report: CostReport,
}

fn better(a: Candidate, b: Candidate) -> Candidate {
    let ord = a
        .total
        .total_cmp(&b.total)
        .then_with(|| a.flat.cmp(&b.flat))
        .then_with(|| a.period.cmp(&b.period));
    if ord == Ordering::Greater {
        b
    } else {
        a
    }
}

fn decode_owners(mut code: u64, n: usize, period: usize) -> Vec<usize> {
    let mut owners = vec![0usize; period];
    for slot in owners.iter_mut().rev() {
        *slot = (code % n as u64) as usize;
        code /= n as u64;
    }
    owners
}

fn flattened_rotation(owners: &[usize], n: usize, shift: usize) -> Vec<u8> {
    let t = owners.len();
    (0..n)
        .flat_map(|i| (0..t).map(move |k| u8::from(owners[(k + shift) % t] == i)))
        .collect()
}

/// Exhaustive search over exclusive schedules for each candidate period.
///
/// Schedules are enumerated column by column (`N^T` owner assignments); each
/// rotation class is represented by its lexicographically smallest flattened
/// matrix. The minimum-cost schedule wins, ties going to the smallest
/// flattened matrix and then to the smallest period.
pub fn optimal_schedule_search(
    states: &[SteadyState],
    periods: &[usize],
    budget: Budget,
) -> Result<(Schedule, CostReport)> {
    let n = states.len();
    if n == 0 {
        return Err(Error::invalid("need at least one system"));
    }
    if periods.is_empty() {
        return Err(Error::invalid("candidate period list is empty"));
    }
    if let Some(&t) = periods.iter().find(|&&t| t < n) {
        return Err(Error::invalid(format!(
            "candidate period {t} is shorter than the number of sensors {n}"
        )));
    }
    let required: u128 = periods.iter().map(|&t| pow_saturating(n, t)).sum();
    budget.check(required, "use smaller candidate periods")?;

    let mut best: Option<Candidate> = None;
    for &period in periods {
        let total = pow_saturating(n, period) as u64;
        let found = (0..total)
            .into_par_iter()
            .filter_map(|code| {
                let owners = decode_owners(code, n, period);
                let flat = flattened_rotation(&owners, n, 0);
                if (1..period).any(|r| flattened_rotation(&owners, n, r) < flat) {
                    return None;
                }
                let schedule = Schedule::from_owners(n, &owners).ok()?;
                let per_sensor = schedule
                    .rows()
                    .iter()
                    .zip(states)
                    .map(|(row, st)| gap_histogram(row).map(|h| sensor_cost(&h, st)))
                    .collect::<Result<Vec<_>>>()
                    .ok()?;
                let report = CostReport::from_per_sensor(per_sensor);
                Some(Candidate {
                    total: report.total,
                    flat,
                    period,
                    schedule,
                    report,
                })
            })
            .reduce_with(better);
        best = match (best, found) {
            (Some(a), Some(b)) => Some(better(a, b)),
            (a, b) => a.or(b),
        };
    }
    let best = best.ok_or_else(|| Error::invalid("no candidate schedules"))?;
    Ok((best.schedule, best.report))
}
