//! Per-process linear models, the Lyapunov/Riccati operator pair and the
//! steady-state quantities every cost formula is assembled from.
//!
//! For a process `x(k+1) = A x(k) + w(k)`, `y(k) = C x(k) + v(k)` the two
//! operators are
//!
//! ```text
//! h(X) = A X Aᵀ + Q
//! g(X) = X − X Cᵀ (C X Cᵀ + R)⁻¹ C X
//! ```
//!
//! and the steady local error covariance `P̄` is the fixed point of `g∘h`.
//! The trace ladder `Tr[hᵗ(P̄)]`, `t = 0, 1, …` is nondecreasing and is the
//! only system-dependent input of the periodic cost formulas.

use std::borrow::Cow;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Symmetry / semi-definiteness tolerance used by validation.
pub const PSD_TOL: f64 = 1e-9;
/// A system counts as unstable when its spectral radius exceeds `1 + STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_LADDER_LEN: usize = 64;

/// One process/sensor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pi: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pi: DMatrix<f64>,
    ) -> Result<Self> {
        Self::validated(0, a, c, q, r, pi)
    }

    /// Like [`LinearSystem::new`], with `index` reported in validation errors.
    pub fn validated(
        index: usize,
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pi: DMatrix<f64>,
    ) -> Result<Self> {
        let fail = |field: &'static str, reason: String| Error::Validation {
            system: index,
            field,
            reason,
        };
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(fail("A", format!("must be square and non-empty, got {}x{}", n, a.ncols())));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(fail("C", format!("must be m x {n} with m >= 1, got {}x{}", m, c.ncols())));
        }
        for (field, mat, dim) in [("Q", &q, n), ("R", &r, m), ("Pi", &pi, n)] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(fail(field, format!("must be {dim}x{dim}, got {}x{}", mat.nrows(), mat.ncols())));
            }
            if let Some(v) = asymmetry(mat).filter(|&v| v > PSD_TOL) {
                return Err(fail(field, format!("not symmetric (max asymmetry {v:e})")));
            }
        }
        let all_finite = [&a, &c, &q, &r, &pi]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(fail("A", "matrices must contain finite values only".into()));
        }
        for (field, mat) in [("Q", &q), ("Pi", &pi)] {
            let min = min_eigenvalue(mat);
            if min < -PSD_TOL {
                return Err(fail(field, format!("not positive semi-definite (min eigenvalue {min:e})")));
            }
        }
        let min_r = min_eigenvalue(&r);
        if min_r <= PSD_TOL {
            return Err(fail("R", format!("not positive definite (min eigenvalue {min_r:e})")));
        }

        let sys = LinearSystem { a, c, q, r, pi };
        if !sys.is_detectable() {
            return Err(fail("C", "(A, C) is not detectable".into()));
        }
        if !sys.is_stabilizable() {
            return Err(fail("Q", "(A, sqrt(Q)) is not stabilizable".into()));
        }
        if !sys.is_unstable() {
            log::warn!(
                "system {index}: spectral radius {:.6} <= 1, process is not unstable",
                sys.spectral_radius()
            );
        }
        Ok(sys)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn pi(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_unstable(&self) -> bool {
        self.spectral_radius() > 1.0 + STABILITY_MARGIN
    }

    /// Non-fatal validation findings (currently only the stability check).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.is_unstable() {
            out.push(format!(
                "spectral radius {:.6} does not exceed 1; the process is not unstable",
                self.spectral_radius()
            ));
        }
        out
    }

    /// PBH test: every eigenvalue with |λ| >= 1 must keep `[A − λI; C]` at full column rank.
    pub fn is_detectable(&self) -> bool {
        let n = self.state_dim();
        let m = self.obs_dim();
        self.unstable_modes().into_iter().all(|lambda| {
            let mut stacked = DMatrix::<Complex<f64>>::zeros(n + m, n);
            for i in 0..n {
                for j in 0..n {
                    let shift = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                    stacked[(i, j)] = Complex::new(self.a[(i, j)], 0.0) - shift;
                }
            }
            for i in 0..m {
                for j in 0..n {
                    stacked[(n + i, j)] = Complex::new(self.c[(i, j)], 0.0);
                }
            }
            full_rank(stacked, n)
        })
    }

    /// PBH test on `[A − λI, Q]`; `Q` and `√Q` share a column space.
    pub fn is_stabilizable(&self) -> bool {
        let n = self.state_dim();
        self.unstable_modes().into_iter().all(|lambda| {
            let mut stacked = DMatrix::<Complex<f64>>::zeros(n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    let shift = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                    stacked[(i, j)] = Complex::new(self.a[(i, j)], 0.0) - shift;
                    stacked[(i, n + j)] = Complex::new(self.q[(i, j)], 0.0);
                }
            }
            full_rank(stacked, n)
        })
    }

    fn unstable_modes(&self) -> Vec<Complex<f64>> {
        self.a
            .complex_eigenvalues()
            .iter()
            .copied()
            .filter(|z| z.norm() >= 1.0 - 1e-12)
            .collect()
    }
}

fn asymmetry(m: &DMatrix<f64>) -> Option<f64> {
    if m.is_square() {
        Some((m - m.transpose()).amax())
    } else {
        None
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m.clone());
    sym.symmetric_eigenvalues().min()
}

fn full_rank(m: DMatrix<Complex<f64>>, rank: usize) -> bool {
    let sv = m.svd(false, false).singular_values;
    let scale = sv.max().max(1.0);
    sv.iter().filter(|&&s| s > 1e-9 * scale).count() >= rank
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// True if `m` is symmetric and has no eigenvalue below `-PSD_TOL`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    m.is_square() && asymmetry(m).is_some_and(|v| v <= PSD_TOL) && min_eigenvalue(m) >= -PSD_TOL
}

fn check_square(sys: &LinearSystem, x: &DMatrix<f64>) -> Result<()> {
    let n = sys.state_dim();
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::invalid(format!(
            "expected a {n}x{n} matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

fn h_unchecked(sys: &LinearSystem, x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&sys.a * x * sys.a.transpose() + &sys.q)
}

fn g_unchecked(sys: &LinearSystem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xct = x * sys.c.transpose();
    let innovation = &sys.c * &xct + &sys.r;
    let inv = invert_spd(innovation)?;
    Ok(symmetrize(x - &xct * inv * xct.transpose()))
}

fn invert_spd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => m
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into())),
    }
}

/// Lyapunov operator `h(X) = A X Aᵀ + Q`.
pub fn lyapunov_step(sys: &LinearSystem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(sys, x)?;
    Ok(h_unchecked(sys, x))
}

/// Riccati operator `g(X) = X − X Cᵀ (C X Cᵀ + R)⁻¹ C X`.
pub fn riccati_step(sys: &LinearSystem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(sys, x)?;
    g_unchecked(sys, x)
}

/// Frobenius norm of `g∘h(P) − P`.
pub fn fixed_point_residual(sys: &LinearSystem, p: &DMatrix<f64>) -> Result<f64> {
    check_square(sys, p)?;
    Ok((g_unchecked(sys, &h_unchecked(sys, p))? - p).norm())
}

/// Row-major nested vectors, the layout used by the JSON system files.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

/// Steady local error covariance together with its trace ladder.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    #[serde(serialize_with = "serialize_rows")]
    p_bar: DMatrix<f64>,
    trace_ladder: Vec<f64>,
    #[serde(skip)]
    a: DMatrix<f64>,
    #[serde(skip)]
    q: DMatrix<f64>,
    /// `h^(len-1)(P̄)`, the seed for extending the ladder.
    #[serde(skip)]
    frontier: DMatrix<f64>,
}

impl SteadyState {
    /// Solves with the default tolerance and iteration cap.
    pub fn solve(sys: &LinearSystem) -> Result<Self> {
        steady_state(sys, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }

    fn from_p_bar(sys: &LinearSystem, p_bar: DMatrix<f64>, ladder_len: usize) -> Self {
        let mut st = SteadyState {
            trace_ladder: vec![p_bar.trace()],
            frontier: p_bar.clone(),
            p_bar,
            a: sys.a.clone(),
            q: sys.q.clone(),
        };
        st.extend_to(ladder_len.max(1) - 1);
        st
    }

    pub fn p_bar(&self) -> &DMatrix<f64> {
        &self.p_bar
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Stored ladder entries `Tr[hᵗ(P̄)]`, `t = 0..len`.
    pub fn trace_ladder(&self) -> &[f64] {
        &self.trace_ladder
    }

    pub(crate) fn h(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&self.a * x * self.a.transpose() + &self.q)
    }

    /// Grows the stored ladder so that it covers index `t_max`.
    pub fn extend_to(&mut self, t_max: usize) {
        while self.trace_ladder.len() <= t_max {
            self.frontier = self.h(&self.frontier);
            self.trace_ladder.push(self.frontier.trace());
        }
    }

    /// Ladder entries `0..=t_max`, computing any missing tail without storing it.
    pub fn traces_upto(&self, t_max: usize) -> Cow<'_, [f64]> {
        if t_max < self.trace_ladder.len() {
            return Cow::Borrowed(&self.trace_ladder[..=t_max]);
        }
        let mut out = self.trace_ladder.clone();
        let mut x = self.frontier.clone();
        while out.len() <= t_max {
            x = self.h(&x);
            out.push(x.trace());
        }
        Cow::Owned(out)
    }

    /// `Tr[hᵗ(P̄)]`.
    pub fn trace(&self, t: usize) -> f64 {
        self.traces_upto(t)[t]
    }

    /// The matrix `hᵗ(P̄)`.
    pub fn h_power(&self, t: usize) -> DMatrix<f64> {
        let mut x = self.p_bar.clone();
        for _ in 0..t {
            x = self.h(&x);
        }
        x
    }
}

/// Iterates `X ← g∘h(X)` from `Π` until the Frobenius step falls below `tol`.
pub fn steady_state(sys: &LinearSystem, tol: f64, max_iter: usize) -> Result<SteadyState> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut x = sys.pi.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = g_unchecked(sys, &h_unchecked(sys, &x))?;
        residual = (&next - &x).norm();
        x = next;
        if residual < tol {
            return Ok(SteadyState::from_p_bar(sys, x, DEFAULT_LADDER_LEN));
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

/// Structured doubling for the filtering Riccati equation.
///
/// Solves the a-priori equation `X = A X (I + Cᵀ R⁻¹ C X)⁻¹ Aᵀ + Q` by squaring
/// the symplectic pencil, then maps the prior solution through `g` to get `P̄`.
/// Shares no iteration with [`steady_state`], so the two can check each other.
pub fn doubling_steady_state(sys: &LinearSystem, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    let n = sys.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv = invert_spd(sys.r.clone())?;
    let mut ak = sys.a.transpose();
    let mut gk = sys.c.transpose() * r_inv * &sys.c;
    let mut hk = sys.q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = &eye + &gk * &hk;
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular doubling pencil".into()))?;
        let a_next = &ak * &w_inv * &ak;
        let g_next = &gk + &ak * &w_inv * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w_inv * &ak;
        residual = (&h_next - &hk).norm();
        ak = a_next;
        gk = symmetrize(g_next);
        hk = symmetrize(h_next);
        if residual < tol {
            return g_unchecked(sys, &hk);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

/// One predict/update cycle of the sensor-side Kalman filter.
pub fn local_kalman_update(
    sys: &LinearSystem,
    x_hat_prev: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_square(sys, p_prev)?;
    if x_hat_prev.len() != sys.state_dim() || y.len() != sys.obs_dim() {
        return Err(Error::invalid(format!(
            "state/measurement length {}/{} does not match system dimensions {}/{}",
            x_hat_prev.len(),
            y.len(),
            sys.state_dim(),
            sys.obs_dim()
        )));
    }
    let x_prior = &sys.a * x_hat_prev;
    let p_prior = h_unchecked(sys, p_prev);
    let s = &sys.c * &p_prior * sys.c.transpose() + &sys.r;
    let gain = &p_prior * sys.c.transpose() * invert_spd(s)?;
    let x_post = &x_prior + &gain * (y - &sys.c * &x_prior);
    let n = sys.state_dim();
    let p_post = symmetrize((DMatrix::identity(n, n) - &gain * &sys.c) * p_prior);
    Ok((x_post, p_post))
}
