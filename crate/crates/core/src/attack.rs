//! Cyclic clock-shift attacks on periodic schedules.
//!
//! An attack adds an offset `τ_i ∈ {0, …, T−1}` to each sensor's clock, so the
//! sensor plays `s_i((k + τ_i) mod T)` at slot `k`. Collisions created by the
//! offsets drop packets. The cheapest attack that silences some sensor
//! entirely is found per target by a binary program over shift indicators:
//!
//! ```text
//! min  ‖Γ‖₁
//! s.t. S₋ᵢ Γ ≥ sᵢ        (every transmission of the target is hit)
//!      E Γ ≤ 1           (at most one offset per other sensor)
//!      Γ ∈ {0,1}^{(T−1)(N−1)}
//! ```
//!
//! solved by depth-first branch-and-bound on linear relaxations, with an
//! exhaustive enumeration kept alongside as an oracle.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{pow_saturating, Budget};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpOutcome, Relation};
use crate::scheduling::{collision_reception, duty_factor, Schedule};
use crate::{check_binary, BinarySeq};

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const LP_TOL: f64 = 1e-9;
const LP_MAX_PIVOTS: usize = 10_000;

/// Per-sensor cyclic clock offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftTuple {
    pub taus: Vec<usize>,
}

impl ShiftTuple {
    pub fn new(taus: Vec<usize>) -> Self {
        ShiftTuple { taus }
    }

    pub fn zero(num_sensors: usize) -> Self {
        ShiftTuple {
            taus: vec![0; num_sensors],
        }
    }

    /// Number of sensors whose clock is actually moved.
    pub fn spoofed_count(&self) -> usize {
        self.taus.iter().filter(|&&t| t != 0).count()
    }

    pub fn check(&self, num_sensors: usize, period: usize) -> Result<()> {
        if self.taus.len() != num_sensors {
            return Err(Error::invalid(format!(
                "shift tuple has {} entries for {num_sensors} sensors",
                self.taus.len()
            )));
        }
        if let Some(&bad) = self.taus.iter().find(|&&t| t >= period) {
            return Err(Error::invalid(format!("shift {bad} outside 0..{period}")));
        }
        Ok(())
    }
}

pub(crate) fn shift_unchecked(row: &[u8], tau: usize) -> BinarySeq {
    let t = row.len();
    (0..t).map(|k| row[(k + tau) % t]).collect()
}

/// `out(k) = row((k + tau) mod T)`.
pub fn apply_shift(row: &[u8], tau: usize) -> Result<BinarySeq> {
    check_binary(row, "row")?;
    if tau >= row.len() {
        return Err(Error::invalid(format!("shift {tau} outside 0..{}", row.len())));
    }
    Ok(shift_unchecked(row, tau))
}

pub(crate) fn shifted_rows(rows: &[BinarySeq], taus: &[usize]) -> Vec<BinarySeq> {
    rows.iter().zip(taus).map(|(r, &t)| shift_unchecked(r, t)).collect()
}

/// Reception pattern of every sensor after the offsets are applied.
pub fn attacked_reception(sched: &Schedule, attack: &ShiftTuple) -> Result<Vec<BinarySeq>> {
    attack.check(sched.num_sensors(), sched.period())?;
    Ok(collision_reception(&shifted_rows(sched.rows(), &attack.taus)))
}

/// Sensors that receive nothing in a period under `attack`.
pub fn blocked_sensors(sched: &Schedule, attack: &ShiftTuple) -> Result<Vec<usize>> {
    Ok(attacked_reception(sched, attack)?
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().all(|&b| b == 0))
        .map(|(i, _)| i)
        .collect())
}

fn check_sensor(sched: &Schedule, i: usize) -> Result<()> {
    if i >= sched.num_sensors() {
        return Err(Error::invalid(format!(
            "sensor {i} out of range for {} sensors",
            sched.num_sensors()
        )));
    }
    Ok(())
}

/// Silences `target` by delaying every other sensor by one slot.
///
/// On an exclusive schedule where the target's transmissions are pairwise
/// non-adjacent, the slot after each of them belongs to another sensor, so a
/// unit shift moves that sensor onto the target's slot. When the construction
/// does not verify, the tuples keeping the target unshifted are searched
/// exhaustively.
pub fn isolate_sensor_attack(sched: &Schedule, target: usize, budget: Budget) -> Result<ShiftTuple> {
    check_sensor(sched, target)?;
    sched.require_exclusive()?;
    let n = sched.num_sensors();
    let period = sched.period();
    let blocks = |attack: &ShiftTuple| -> Result<bool> {
        Ok(attacked_reception(sched, attack)?[target].iter().all(|&b| b == 0))
    };

    if period > 1 {
        let mut taus = vec![1; n];
        taus[target] = 0;
        let attack = ShiftTuple::new(taus);
        if blocks(&attack)? {
            return Ok(attack);
        }
    }
    let f = duty_factor(sched.row(target))?;
    log::debug!("unit-shift isolation failed for sensor {target} (duty factor {f}); searching exhaustively");

    budget.check(pow_saturating(period, n - 1), "use a shorter period or fewer sensors")?;
    let mut taus = vec![0usize; n];
    loop {
        let attack = ShiftTuple::new(taus.clone());
        if blocks(&attack)? {
            return Ok(attack);
        }
        if !next_tuple(&mut taus, period, Some(target)) {
            break;
        }
    }
    Err(Error::Infeasible(format!("no shift tuple silences sensor {target}")))
}

/// Advances `taus` in lexicographic order (last entry fastest), skipping `pinned`.
fn next_tuple(taus: &mut [usize], period: usize, pinned: Option<usize>) -> bool {
    for pos in (0..taus.len()).rev() {
        if Some(pos) == pinned {
            continue;
        }
        if taus[pos] + 1 < period {
            taus[pos] += 1;
            return true;
        }
        taus[pos] = 0;
    }
    false
}

/// Independent uniform offsets from a seeded generator.
pub fn random_attack(period: usize, num_sensors: usize, seed: u64) -> Result<ShiftTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_attack_with(&mut rng, period, num_sensors)
}

pub fn random_attack_with<R: Rng + ?Sized>(rng: &mut R, period: usize, num_sensors: usize) -> Result<ShiftTuple> {
    if period == 0 {
        return Err(Error::invalid("period must be at least 1"));
    }
    Ok(ShiftTuple::new(
        (0..num_sensors).map(|_| rng.random_range(0..period)).collect(),
    ))
}

/// The covering program for one target sensor.
///
/// Columns are ordered by sensor, then by shift `1..T`: column
/// `b·(T−1) + (τ−1)` is sensor `others[b]` delayed by `τ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MipInstance {
    pub target: usize,
    pub period: usize,
    pub others: Vec<usize>,
    /// `T × (T−1)(N−1)` matrix of shifted rows.
    pub s_minus_i: Vec<Vec<u8>>,
    /// `(N−1) × (T−1)(N−1)` block selector `E`.
    pub selector: Vec<Vec<u8>>,
    pub s_i: BinarySeq,
}

pub fn build_mip(sched: &Schedule, target: usize) -> Result<MipInstance> {
    check_sensor(sched, target)?;
    let n = sched.num_sensors();
    if n < 2 {
        return Err(Error::invalid("need at least two sensors to build an attack program"));
    }
    sched.require_exclusive()?;
    let period = sched.period();
    let block = period - 1;
    let others: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    let cols = block * others.len();
    let mut s_minus_i = vec![vec![0u8; cols]; period];
    let mut selector = vec![vec![0u8; cols]; others.len()];
    for (b, &j) in others.iter().enumerate() {
        for tau in 1..period {
            let c = b * block + tau - 1;
            let shifted = shift_unchecked(sched.row(j), tau);
            for k in 0..period {
                s_minus_i[k][c] = shifted[k];
            }
            selector[b][c] = 1;
        }
    }
    Ok(MipInstance {
        target,
        period,
        others,
        s_minus_i,
        selector,
        s_i: sched.row(target).to_vec(),
    })
}

impl MipInstance {
    pub fn block_size(&self) -> usize {
        self.period - 1
    }

    pub fn num_blocks(&self) -> usize {
        self.others.len()
    }

    pub fn num_vars(&self) -> usize {
        self.block_size() * self.num_blocks()
    }

    pub fn column(&self, block: usize, tau: usize) -> usize {
        block * self.block_size() + tau - 1
    }

    /// Stacked inequality system `D Γ ≤ b` with `D = [−S₋ᵢ; E]`, `b = [−sᵢ; 1]`.
    pub fn inequality_system(&self) -> (Vec<Vec<i8>>, Vec<i8>) {
        let mut d: Vec<Vec<i8>> = self
            .s_minus_i
            .iter()
            .map(|row| row.iter().map(|&v| -(v as i8)).collect())
            .collect();
        d.extend(self.selector.iter().map(|row| row.iter().map(|&v| v as i8).collect()));
        let mut b: Vec<i8> = self.s_i.iter().map(|&v| -(v as i8)).collect();
        b.extend(std::iter::repeat_n(1, self.num_blocks()));
        (d, b)
    }

    pub fn is_feasible(&self, gamma: &[u8]) -> bool {
        if gamma.len() != self.num_vars() || gamma.iter().any(|&g| g > 1) {
            return false;
        }
        let (d, b) = self.inequality_system();
        d.iter().zip(&b).all(|(row, &rhs)| {
            row.iter().zip(gamma).map(|(&a, &g)| a as i32 * g as i32).sum::<i32>() <= rhs as i32
        })
    }

    /// Shift tuple encoded by a feasible indicator vector (target unshifted).
    pub fn decode(&self, gamma: &[u8]) -> Result<ShiftTuple> {
        if gamma.len() != self.num_vars() {
            return Err(Error::invalid("indicator vector has the wrong length"));
        }
        let mut taus = vec![0usize; self.num_blocks() + 1];
        for (b, &j) in self.others.iter().enumerate() {
            let block = &gamma[b * self.block_size()..(b + 1) * self.block_size()];
            match block.iter().filter(|&&g| g == 1).count() {
                0 => {}
                1 => taus[j] = block.iter().position(|&g| g == 1).unwrap() + 1,
                _ => return Err(Error::invalid(format!("block of sensor {j} selects several shifts"))),
            }
        }
        Ok(ShiftTuple::new(taus))
    }

    /// Indicator vector of `attack`; `None` when the target itself is shifted.
    pub fn encode(&self, attack: &ShiftTuple) -> Option<Vec<u8>> {
        if attack.taus.get(self.target).copied() != Some(0) || attack.taus.len() != self.num_blocks() + 1 {
            return None;
        }
        let mut gamma = vec![0u8; self.num_vars()];
        for (b, &j) in self.others.iter().enumerate() {
            let tau = attack.taus[j];
            if tau >= self.period {
                return None;
            }
            if tau > 0 {
                gamma[self.column(b, tau)] = 1;
            }
        }
        Some(gamma)
    }
}

/// Search node: which blocks are still relaxed and which are pinned.
///
/// A pinned block is either all zero (`None`) or the unit vector selecting
/// shift `τ` (`Some(τ)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnbState {
    pub live: BTreeSet<usize>,
    pub fixed: BTreeMap<usize, Option<usize>>,
    pub incumbent: Option<usize>,
}

impl BnbState {
    pub fn root(inst: &MipInstance) -> Self {
        BnbState {
            live: (0..inst.num_blocks()).collect(),
            fixed: BTreeMap::new(),
            incumbent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    Optimal { gamma: Vec<f64>, objective: f64 },
    Infeasible,
}

/// Linear relaxation at a node: live coordinates in `[0,1]`, pinned blocks fixed.
pub fn lp_relaxation(inst: &MipInstance, state: &BnbState) -> Result<Relaxation> {
    let blocks = inst.num_blocks();
    for b in 0..blocks {
        if state.live.contains(&b) == state.fixed.contains_key(&b) {
            return Err(Error::invalid(format!("block {b} must be either live or fixed")));
        }
    }
    let width = inst.block_size();
    let mut gamma = vec![0.0; inst.num_vars()];
    let mut fixed_ones = 0usize;
    for (&b, &choice) in &state.fixed {
        if let Some(tau) = choice {
            if tau == 0 || tau >= inst.period {
                return Err(Error::invalid(format!("block {b} pinned to invalid shift {tau}")));
            }
            gamma[inst.column(b, tau)] = 1.0;
            fixed_ones += 1;
        }
    }
    let uncovered: Vec<usize> = (0..inst.period)
        .filter(|&k| inst.s_i[k] == 1)
        .filter(|&k| (0..inst.num_vars()).all(|c| gamma[c] == 0.0 || inst.s_minus_i[k][c] == 0))
        .collect();
    let live_cols: Vec<usize> = state
        .live
        .iter()
        .flat_map(|&b| b * width..(b + 1) * width)
        .collect();
    if uncovered.is_empty() {
        return Ok(Relaxation::Optimal {
            gamma,
            objective: fixed_ones as f64,
        });
    }
    if live_cols.is_empty() {
        return Ok(Relaxation::Infeasible);
    }

    let mut program = LinearProgram::new(vec![1.0; live_cols.len()]);
    for &k in &uncovered {
        let coeffs = live_cols.iter().map(|&c| inst.s_minus_i[k][c] as f64).collect();
        program.add(coeffs, Relation::Ge, 1.0);
    }
    for &b in &state.live {
        let coeffs = live_cols.iter().map(|&c| f64::from(c / width == b)).collect();
        program.add(coeffs, Relation::Le, 1.0);
    }
    for v in 0..live_cols.len() {
        program.set_upper(v, 1.0);
    }
    match lp::solve(&program, LP_MAX_PIVOTS)? {
        LpOutcome::Infeasible => Ok(Relaxation::Infeasible),
        LpOutcome::Unbounded => Err(Error::Numerical("relaxation reported unbounded".into())),
        LpOutcome::Optimal { x, objective } => {
            for (&c, v) in live_cols.iter().zip(x) {
                gamma[c] = v;
            }
            Ok(Relaxation::Optimal {
                gamma,
                objective: objective + fixed_ones as f64,
            })
        }
    }
}

/// Result of the branch-and-bound run for one target sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSearch {
    pub target: usize,
    /// Optimal indicator vector, `None` when the target cannot be silenced.
    pub gamma: Option<Vec<u8>>,
    pub cost: Option<usize>,
    pub nodes: usize,
    /// Relaxation values along the path to the accepted solution.
    pub accepting_path_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnbOutcome {
    pub attack: Option<ShiftTuple>,
    pub spoofed_count: Option<usize>,
    pub target: Option<usize>,
    pub per_target: Vec<TargetSearch>,
}

impl BnbOutcome {
    pub fn per_target_costs(&self) -> Vec<Option<usize>> {
        self.per_target.iter().map(|t| t.cost).collect()
    }
}

struct Search<'a> {
    inst: &'a MipInstance,
    state: BnbState,
    best: Option<(Vec<u8>, Vec<f64>)>,
    path: Vec<f64>,
    nodes: usize,
}

fn integral(gamma: &[f64]) -> Option<Vec<u8>> {
    gamma
        .iter()
        .map(|&v| {
            if v.abs() <= INTEGRALITY_TOL {
                Some(0)
            } else if (v - 1.0).abs() <= INTEGRALITY_TOL {
                Some(1)
            } else {
                None
            }
        })
        .collect()
}

impl Search<'_> {
    fn visit(&mut self) -> Result<()> {
        let node = self.nodes;
        self.nodes += 1;
        let relax = lp_relaxation(self.inst, &self.state)
            .map_err(|e| Error::Numerical(format!("target {} node {node}: {e}", self.inst.target)))?;
        let Relaxation::Optimal { gamma, objective } = relax else {
            return Ok(());
        };
        if let Some(best) = self.state.incumbent {
            if objective >= best as f64 - LP_TOL {
                return Ok(());
            }
        }
        self.path.push(objective);
        if let Some(rounded) = integral(&gamma).filter(|g| self.inst.is_feasible(g)) {
            let cost = rounded.iter().filter(|&&g| g == 1).count();
            self.state.incumbent = Some(cost);
            self.best = Some((rounded, self.path.clone()));
        } else {
            let width = self.inst.block_size();
            let branch_on = self
                .state
                .live
                .iter()
                .map(|&b| {
                    let mass: f64 = gamma[b * width..(b + 1) * width]
                        .iter()
                        .map(|&v| v.min(1.0 - v).max(0.0))
                        .sum();
                    (b, mass)
                })
                .fold(None::<(usize, f64)>, |acc, (b, m)| match acc {
                    Some((_, am)) if am >= m => acc,
                    _ => Some((b, m)),
                })
                .map(|(b, _)| b)
                .ok_or_else(|| {
                    Error::Numerical(format!(
                        "target {} node {node}: fractional relaxation with no live block",
                        self.inst.target
                    ))
                })?;
            self.state.live.remove(&branch_on);
            for choice in std::iter::once(None).chain((1..self.inst.period).map(Some)) {
                self.state.fixed.insert(branch_on, choice);
                self.visit()?;
            }
            self.state.fixed.remove(&branch_on);
            self.state.live.insert(branch_on);
        }
        self.path.pop();
        Ok(())
    }
}

/// Depth-first branch-and-bound for a single target.
pub fn bnb_for_target(sched: &Schedule, target: usize) -> Result<TargetSearch> {
    let inst = build_mip(sched, target)?;
    let mut search = Search {
        state: BnbState::root(&inst),
        inst: &inst,
        best: None,
        path: Vec::new(),
        nodes: 0,
    };
    search.visit()?;
    let nodes = search.nodes;
    Ok(match search.best {
        Some((gamma, bounds)) => TargetSearch {
            target,
            cost: Some(gamma.iter().filter(|&&g| g == 1).count()),
            gamma: Some(gamma),
            nodes,
            accepting_path_bounds: bounds,
        },
        None => TargetSearch {
            target,
            gamma: None,
            cost: None,
            nodes,
            accepting_path_bounds: Vec::new(),
        },
    })
}

/// Cheapest attack over all targets; ties go to the lowest target index.
pub fn bnb_optimal_attack(sched: &Schedule) -> Result<BnbOutcome> {
    if sched.num_sensors() < 2 {
        return Err(Error::invalid("need at least two sensors"));
    }
    sched.require_exclusive()?;
    let per_target = (0..sched.num_sensors())
        .into_par_iter()
        .map(|i| bnb_for_target(sched, i))
        .collect::<Result<Vec<_>>>()?;
    let winner = per_target
        .iter()
        .filter_map(|t| t.cost.map(|c| (c, t)))
        .fold(None::<(usize, &TargetSearch)>, |acc, (c, t)| match acc {
            Some((bc, _)) if bc <= c => acc,
            _ => Some((c, t)),
        });
    let (attack, spoofed_count, target) = match winner {
        Some((cost, t)) => {
            let inst = build_mip(sched, t.target)?;
            let attack = inst.decode(t.gamma.as_deref().unwrap_or_default())?;
            (Some(attack), Some(cost), Some(t.target))
        }
        None => (None, None, None),
    };
    Ok(BnbOutcome {
        attack,
        spoofed_count,
        target,
        per_target,
    })
}

/// Which shift tuples count as an attack on a silenced sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttackSpace {
    /// The silenced sensor keeps its own clock (the program's feasible set).
    #[default]
    TargetUnshifted,
    /// Any tuple silencing any sensor.
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BruteForceOutcome {
    Blocking {
        attack: ShiftTuple,
        spoofed_count: usize,
        blocked: Vec<usize>,
    },
    NoBlockingAttack,
}

impl BruteForceOutcome {
    pub fn spoofed_count(&self) -> Option<usize> {
        match self {
            BruteForceOutcome::Blocking { spoofed_count, .. } => Some(*spoofed_count),
            BruteForceOutcome::NoBlockingAttack => None,
        }
    }
}

/// Enumerates all `T^N` shift tuples and keeps the cheapest silencing one,
/// ties going to the lexicographically smallest tuple.
pub fn brute_force_optimal_attack(sched: &Schedule, space: AttackSpace, budget: Budget) -> Result<BruteForceOutcome> {
    let n = sched.num_sensors();
    let period = sched.period();
    budget.check(pow_saturating(period, n), "use a shorter period or fewer sensors")?;
    let mut taus = vec![0usize; n];
    let mut best: Option<(usize, ShiftTuple, Vec<usize>)> = None;
    loop {
        let cost = taus.iter().filter(|&&t| t != 0).count();
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            let reception = collision_reception(&shifted_rows(sched.rows(), &taus));
            let blocked: Vec<usize> = (0..n)
                .filter(|&i| reception[i].iter().all(|&b| b == 0))
                .filter(|&i| space == AttackSpace::Unrestricted || taus[i] == 0)
                .collect();
            if !blocked.is_empty() {
                best = Some((cost, ShiftTuple::new(taus.clone()), blocked));
            }
        }
        if !next_tuple(&mut taus, period, None) {
            break;
        }
    }
    Ok(match best {
        Some((spoofed_count, attack, blocked)) => BruteForceOutcome::Blocking {
            attack,
            spoofed_count,
            blocked,
        },
        None => BruteForceOutcome::NoBlockingAttack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> Schedule {
        Schedule::new(vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]).unwrap()
    }

    fn alternating() -> Schedule {
        Schedule::new(vec![vec![0, 1], vec![1, 0]]).unwrap()
    }

    #[test]
    fn shift_examples() {
        assert_eq!(apply_shift(&[1, 0, 0], 0).unwrap(), vec![1, 0, 0]);
        assert_eq!(apply_shift(&[1, 0, 0], 2).unwrap(), vec![0, 1, 0]);
        let row = [1, 1, 0, 1, 0];
        assert_eq!(apply_shift(&apply_shift(&row, 3).unwrap(), 2).unwrap(), row.to_vec());
        assert!(apply_shift(&row, 5).is_err());
    }

    #[test]
    fn attacked_reception_examples() {
        let s = reference();
        let rx = attacked_reception(&s, &ShiftTuple::zero(3)).unwrap();
        assert_eq!(rx, s.rows());
        let rx = attacked_reception(&s, &ShiftTuple::new(vec![0, 0, 2])).unwrap();
        assert_eq!(rx, vec![vec![0, 0, 1], vec![0, 0, 0], vec![0, 0, 0]]);
        assert!(attacked_reception(&s, &ShiftTuple::new(vec![0, 3, 0])).is_err());
        assert!(attacked_reception(&s, &ShiftTuple::new(vec![0, 0])).is_err());
    }

    #[test]
    fn isolate_examples() {
        let s = reference();
        let a = isolate_sensor_attack(&s, 0, Budget::DEFAULT).unwrap();
        assert_eq!(a.taus, vec![0, 1, 1]);
        assert_eq!(blocked_sensors(&s, &a).unwrap()[0], 0);

        let a = isolate_sensor_attack(&alternating(), 0, Budget::DEFAULT).unwrap();
        assert_eq!(a.taus, vec![0, 1]);
        let rx = attacked_reception(&alternating(), &a).unwrap();
        assert!(rx.iter().flatten().all(|&b| b == 0));

        let s1 = vec![1, 0, 0, 0, 1, 0, 0];
        let s2: Vec<u8> = s1.iter().map(|b| 1 - b).collect();
        let fig = Schedule::new(vec![s1, s2]).unwrap();
        let a = isolate_sensor_attack(&fig, 0, Budget::DEFAULT).unwrap();
        assert_eq!(a.taus, vec![0, 1]);
        assert!(attacked_reception(&fig, &a).unwrap()[0].iter().all(|&b| b == 0));
    }

    #[test]
    fn isolate_falls_back_to_search() {
        // sensor 0 owns two adjacent slots; the unit shift misses one of them
        let s = Schedule::from_owners(3, &[0, 0, 1, 2]).unwrap();
        let a = isolate_sensor_attack(&s, 0, Budget::DEFAULT).unwrap();
        assert!(attacked_reception(&s, &a).unwrap()[0].iter().all(|&b| b == 0));
        assert_eq!(a.taus[0], 0);
        // a sensor owning everything but one slot cannot be silenced by one other sensor
        let s = Schedule::from_owners(2, &[0, 0, 0, 1]).unwrap();
        assert!(matches!(isolate_sensor_attack(&s, 0, Budget::DEFAULT), Err(Error::Infeasible(_))));
    }

    #[test]
    fn random_attack_contract() {
        assert_eq!(random_attack(1, 4, 9).unwrap(), ShiftTuple::zero(4));
        assert_eq!(random_attack(5, 3, 42).unwrap(), random_attack(5, 3, 42).unwrap());
        assert!(random_attack(0, 3, 1).is_err());
    }

    #[test]
    fn random_attack_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let a = random_attack_with(&mut rng, 3, 1).unwrap();
            counts[a.taus[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn mip_reference_target_two() {
        let inst = build_mip(&reference(), 1).unwrap();
        assert_eq!(inst.num_vars(), 4);
        assert_eq!(inst.others, vec![0, 2]);
        let mut gamma = vec![0u8; 4];
        gamma[inst.column(1, 2)] = 1;
        assert!(inst.is_feasible(&gamma));
        assert_eq!(inst.decode(&gamma).unwrap().taus, vec![0, 0, 2]);
        assert!(!inst.is_feasible(&[0, 0, 0, 0]));
        assert!(!inst.is_feasible(&[0, 0, 1, 1]));
    }

    #[test]
    fn mip_edge_cases() {
        let s = Schedule::new(vec![vec![1, 1, 1], vec![0, 0, 0]]).unwrap();
        let inst = build_mip(&s, 1).unwrap();
        assert!(inst.is_feasible(&[0, 0]));
        assert!(inst.is_feasible(&[1, 0]));
        let root = BnbState::root(&inst);
        assert!(matches!(lp_relaxation(&inst, &root).unwrap(), Relaxation::Optimal { objective, .. } if objective == 0.0));

        let inst = build_mip(&alternating(), 0).unwrap();
        assert_eq!(inst.num_vars(), 1);
        assert!(inst.is_feasible(&[1]));

        let single = Schedule::new(vec![vec![1, 1]]).unwrap();
        assert!(build_mip(&single, 0).is_err());
    }

    #[test]
    fn inequality_system_uses_cover_direction() {
        let inst = build_mip(&reference(), 1).unwrap();
        let (d, b) = inst.inequality_system();
        assert_eq!(d.len(), 3 + 2);
        assert_eq!(b, vec![0, -1, 0, 1, 1]);
    }

    #[test]
    fn relaxation_examples() {
        let inst = build_mip(&reference(), 1).unwrap();
        let root = BnbState::root(&inst);
        match lp_relaxation(&inst, &root).unwrap() {
            Relaxation::Optimal { objective, .. } => assert!(objective <= 1.0 + LP_TOL),
            Relaxation::Infeasible => panic!("root relaxation must be feasible"),
        }
        let mut pinned = root.clone();
        pinned.live.clear();
        pinned.fixed.insert(0, None);
        pinned.fixed.insert(1, Some(2));
        assert_eq!(
            lp_relaxation(&inst, &pinned).unwrap(),
            Relaxation::Optimal {
                gamma: vec![0.0, 0.0, 0.0, 1.0],
                objective: 1.0
            }
        );
        pinned.fixed.insert(1, None);
        assert_eq!(lp_relaxation(&inst, &pinned).unwrap(), Relaxation::Infeasible);

        // target transmits in every slot but the only other sensor is silent
        let s = Schedule::new(vec![vec![1, 1, 1], vec![0, 0, 0]]).unwrap();
        let inst = build_mip(&s, 0).unwrap();
        assert_eq!(lp_relaxation(&inst, &BnbState::root(&inst)).unwrap(), Relaxation::Infeasible);
    }

    #[test]
    fn bnb_reference_and_alternating() {
        let out = bnb_optimal_attack(&reference()).unwrap();
        assert_eq!(out.spoofed_count, Some(1));
        assert_eq!(out.per_target_costs(), vec![Some(1); 3]);
        let attack = out.attack.unwrap();
        assert!(!blocked_sensors(&reference(), &attack).unwrap().is_empty());

        let out = bnb_optimal_attack(&alternating()).unwrap();
        assert_eq!(out.spoofed_count, Some(1));
        assert_eq!(out.attack.unwrap().taus, vec![0, 1]);
    }

    #[test]
    fn brute_force_examples() {
        let out = brute_force_optimal_attack(&reference(), AttackSpace::TargetUnshifted, Budget::DEFAULT).unwrap();
        assert_eq!(out.spoofed_count(), Some(1));
        let single = Schedule::new(vec![vec![1, 1, 1]]).unwrap();
        assert_eq!(
            brute_force_optimal_attack(&single, AttackSpace::Unrestricted, Budget::DEFAULT).unwrap(),
            BruteForceOutcome::NoBlockingAttack
        );
        assert!(matches!(
            brute_force_optimal_attack(&reference(), AttackSpace::TargetUnshifted, Budget(10)),
            Err(Error::Budget { .. })
        ));
    }

    fn exclusive_schedule() -> impl Strategy<Value = Schedule> {
        (2usize..=4, 2usize..=6).prop_flat_map(|(n, t)| {
            prop::collection::vec(0..n, t).prop_map(move |owners| Schedule::from_owners(n, &owners).unwrap())
        })
    }

    proptest! {
        #[test]
        fn shift_group_laws(row in prop::collection::vec(0u8..2, 1..16), a in 0usize..64, b in 0usize..64) {
            let t = row.len();
            let (a, b) = (a % t, b % t);
            let twice = apply_shift(&apply_shift(&row, a).unwrap(), b).unwrap();
            prop_assert_eq!(&twice, &apply_shift(&row, (a + b) % t).unwrap());
            prop_assert_eq!(twice.iter().filter(|&&x| x == 1).count(), row.iter().filter(|&&x| x == 1).count());
            prop_assert_eq!(apply_shift(&apply_shift(&row, a).unwrap(), (t - a) % t).unwrap(), row);
        }

        #[test]
        fn mip_soundness(s in exclusive_schedule(), seed in any::<u64>()) {
            let n = s.num_sensors();
            let t = s.period();
            for target in 0..n {
                let inst = build_mip(&s, target).unwrap();
                let mut attack = random_attack(t, n, seed ^ target as u64).unwrap();
                attack.taus[target] = 0;
                let gamma = inst.encode(&attack).unwrap();
                let silenced = attacked_reception(&s, &attack).unwrap()[target].iter().all(|&b| b == 0);
                prop_assert_eq!(inst.is_feasible(&gamma), silenced);
                prop_assert_eq!(inst.decode(&gamma).unwrap(), attack);
            }
        }

        #[test]
        fn bnb_matches_brute_force(s in exclusive_schedule()) {
            let bnb = bnb_optimal_attack(&s).unwrap();
            let brute = brute_force_optimal_attack(&s, AttackSpace::TargetUnshifted, Budget::DEFAULT).unwrap();
            prop_assert_eq!(bnb.spoofed_count, brute.spoofed_count());
            for t in &bnb.per_target {
                if let Some(c) = t.cost {
                    prop_assert!(t.accepting_path_bounds.iter().all(|&b| b <= c as f64 + LP_TOL));
                }
            }
            if let Some(attack) = &bnb.attack {
                prop_assert!(blocked_sensors(&s, attack).unwrap().contains(&bnb.target.unwrap()));
            }
        }
    }
}
