//! Small dense two-phase simplex.
//!
//! Minimizes `cᵀx` over `x >= 0` subject to `<=`, `>=` and `=` rows and
//! optional per-variable upper bounds. Bland's rule is used for both the
//! entering and leaving choice, so the method cannot cycle. Intended for the
//! tiny relaxations of the attack search, not for general use.

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;
/// Phase-one objective above this means the constraints are infeasible.
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            constraints: Vec::new(),
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn set_upper(&mut self, var: usize, bound: f64) {
        self.upper[var] = Some(bound);
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][c];
            if f.abs() > 0.0 {
                for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        self.basis[r] = c;
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis.iter().zip(&self.rhs).map(|(&b, v)| cost[b] * v).sum()
    }

    fn run(&mut self, cost: &[f64], allowed: usize, max_iter: usize) -> Result<PhaseEnd> {
        for _ in 0..max_iter {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.rows)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                reduced < -EPS
            });
            let Some(c) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > EPS {
                    let ratio = self.rhs[i] / row[c];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return Ok(PhaseEnd::Unbounded),
            }
        }
        Err(Error::Numerical(format!("simplex did not terminate within {max_iter} pivots")))
    }
}

/// Solves `lp` to optimality, reporting infeasibility and unboundedness as outcomes.
pub fn solve(lp: &LinearProgram, max_iter: usize) -> Result<LpOutcome> {
    let n = lp.num_vars();
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.coeffs.len() != n {
                return Err(Error::invalid("constraint length does not match variable count"));
            }
            Ok((c.coeffs.clone(), c.relation, c.rhs))
        })
        .collect::<Result<_>>()?;
    for (j, ub) in lp.upper.iter().enumerate() {
        if let Some(u) = ub {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            rows.push((coeffs, Relation::Le, *u));
        }
    }
    // normalize to nonnegative right-hand sides
    for (coeffs, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let art_rows: Vec<usize> = (0..m).filter(|&i| rows[i].1 != Relation::Le).collect();
    let art_start = n + slack_count;
    let width = art_start + art_rows.len();

    let mut tab = Tableau {
        rows: vec![vec![0.0; width]; m],
        rhs: vec![0.0; m],
        basis: vec![0; m],
    };
    let mut slack = n;
    let mut art = art_start;
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        tab.rows[i][..n].copy_from_slice(coeffs);
        tab.rhs[i] = *rhs;
        match rel {
            Relation::Le => {
                tab.rows[i][slack] = 1.0;
                tab.basis[i] = slack;
                slack += 1;
            }
            Relation::Ge => {
                tab.rows[i][slack] = -1.0;
                slack += 1;
                tab.rows[i][art] = 1.0;
                tab.basis[i] = art;
                art += 1;
            }
            Relation::Eq => {
                tab.rows[i][art] = 1.0;
                tab.basis[i] = art;
                art += 1;
            }
        }
    }

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; width];
        phase1[art_start..].iter_mut().for_each(|v| *v = 1.0);
        tab.run(&phase1, width, max_iter)?;
        if tab.objective(&phase1) > FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // drive remaining artificials out of the basis, dropping redundant rows
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.rhs.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(&lp.objective);
    match tab.run(&phase2, art_start, max_iter)? {
        PhaseEnd::Unbounded => Ok(LpOutcome::Unbounded),
        PhaseEnd::Optimal => {
            let mut x = vec![0.0; n];
            for (&b, &v) in tab.basis.iter().zip(&tab.rhs) {
                if b < n {
                    x[b] = v.max(0.0);
                }
            }
            let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(LpOutcome::Optimal { x, objective })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 → (2, 6), 36
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, obj) = optimal(solve(&lp, 100).unwrap());
        assert!((obj + 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn covering_relaxation_is_fractional() {
        // three pairwise covers of three elements: optimum 1.5 at (.5, .5, .5)
        let mut lp = LinearProgram::new(vec![1.0; 3]);
        lp.add(vec![1.0, 1.0, 0.0], Relation::Ge, 1.0);
        lp.add(vec![0.0, 1.0, 1.0], Relation::Ge, 1.0);
        lp.add(vec![1.0, 0.0, 1.0], Relation::Ge, 1.0);
        (0..3).for_each(|j| lp.set_upper(j, 1.0));
        let (x, obj) = optimal(solve(&lp, 100).unwrap());
        assert!((obj - 1.5).abs() < 1e-9);
        assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + 2y s.t. x + y = 3, -x <= -1 → x = 3, y = 0
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 3.0);
        lp.add(vec![-1.0, 0.0], Relation::Le, -1.0);
        let (x, obj) = optimal(solve(&lp, 100).unwrap());
        assert!((obj - 3.0).abs() < 1e-9);
        assert!((x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        lp.set_upper(0, 1.0);
        assert_eq!(solve(&lp, 100).unwrap(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.add(vec![1.0], Relation::Ge, 0.0);
        assert_eq!(solve(&lp, 100).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn empty_row_that_cannot_be_met() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![0.0, 0.0], Relation::Ge, 1.0);
        assert_eq!(solve(&lp, 100).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (_, obj) = optimal(solve(&lp, 100).unwrap());
        assert!((obj - 1.0).abs() < 1e-9);
    }
}
