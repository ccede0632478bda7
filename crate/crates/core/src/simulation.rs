//! Exact covariance propagation, Monte Carlo cost estimation and sampled
//! state trajectories.
//!
//! Slot convention: the remote covariance before slot 0 is the initial
//! covariance (by default `P̄`). At slot `k` it becomes `P̄` when the packet
//! of that slot arrives and `h(P(k−1))` otherwise, so with the default start
//! `Tr P(k)` equals the ladder entry for the number of slots since the last
//! arrival.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::attack::{attacked_reception, random_attack_with, ShiftTuple};
use crate::error::{Error, Result};
use crate::lti_estimation::{local_kalman_update, LinearSystem, SteadyState};
use crate::protocol_sequences::{construct_shift_invariant, random_sigma, PolicySet};
use crate::scheduling::{average_cost, Cost, CostReport, Schedule};
use crate::BinarySeq;

/// Traces above this value end a sensor's series.
pub const OVERFLOW_TRACE: f64 = 1e12;

/// Normal quantile used for the reported confidence half-widths.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCovariance {
    Steady,
    Custom(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub seed: u64,
    pub trials: usize,
    pub initial: InitialCovariance,
}

impl SimConfig {
    pub fn new(horizon: usize, seed: u64, trials: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        Ok(SimConfig {
            horizon,
            seed,
            trials,
            initial: InitialCovariance::Steady,
        })
    }

    pub fn with_initial(mut self, initial: InitialCovariance) -> Self {
        self.initial = initial;
        self
    }

    fn check(&self) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::invalid("horizon and trials must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeriodicAverage {
    Report(CostReport),
    /// Horizon shorter than two periods.
    TransientOnly,
}

impl Serialize for PeriodicAverage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PeriodicAverage::Report(r) => r.serialize(s),
            PeriodicAverage::TransientOnly => s.serialize_str("transient-only"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceSeries {
    pub horizon: usize,
    pub period: usize,
    /// `traces[i][k] = Tr P_i(k)`; a series stops at its overflow slot.
    pub traces: Vec<Vec<f64>>,
    pub running_means: Vec<Vec<f64>>,
    /// No reception in a whole period.
    pub divergent: Vec<bool>,
    pub overflow_at: Vec<Option<usize>>,
    /// Observed trace ratio over the last simulated period, for divergent sensors.
    pub growth_factors: Vec<Option<f64>>,
    /// Mean over all complete periods after the first.
    pub periodic_average: PeriodicAverage,
}

impl CovarianceSeries {
    pub fn num_sensors(&self) -> usize {
        self.traces.len()
    }

    /// Sum of per-sensor running means, up to the earliest overflow.
    pub fn total_running_mean(&self) -> Vec<f64> {
        let len = self.running_means.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|k| self.running_means.iter().map(|m| m[k]).sum())
            .collect()
    }
}

fn initial_matrices(states: &[SteadyState], initial: &InitialCovariance) -> Result<Vec<DMatrix<f64>>> {
    match initial {
        InitialCovariance::Steady => Ok(states.iter().map(|s| s.p_bar().clone()).collect()),
        InitialCovariance::Custom(ms) => {
            if ms.len() != states.len() {
                return Err(Error::invalid(format!(
                    "{} initial covariances for {} systems",
                    ms.len(),
                    states.len()
                )));
            }
            for (i, (m, s)) in ms.iter().zip(states).enumerate() {
                if m.shape() != s.p_bar().shape() {
                    return Err(Error::invalid(format!(
                        "initial covariance {i} has shape {:?}, expected {:?}",
                        m.shape(),
                        s.p_bar().shape()
                    )));
                }
            }
            Ok(ms.clone())
        }
    }
}

fn running_mean(xs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    xs.iter()
        .enumerate()
        .map(|(k, x)| {
            acc += x;
            acc / (k + 1) as f64
        })
        .collect()
}

/// Propagates the covariance recursion over the given reception patterns.
pub fn covariance_series_from_receptions(
    states: &[SteadyState],
    receptions: &[BinarySeq],
    cfg: &SimConfig,
) -> Result<CovarianceSeries> {
    cfg.check()?;
    if receptions.len() != states.len() {
        return Err(Error::invalid(format!(
            "{} reception sequences for {} systems",
            receptions.len(),
            states.len()
        )));
    }
    let period = receptions.first().map_or(0, Vec::len);
    if period == 0 || receptions.iter().any(|r| r.len() != period) {
        return Err(Error::invalid("reception sequences must share one nonzero period"));
    }
    let init = initial_matrices(states, &cfg.initial)?;
    let horizon = cfg.horizon;

    let mut traces = Vec::with_capacity(states.len());
    let mut overflow_at = Vec::with_capacity(states.len());
    for ((st, rec), p0) in states.iter().zip(receptions).zip(init) {
        let mut p = p0;
        let mut tr = Vec::with_capacity(horizon);
        let mut overflow = None;
        for k in 0..horizon {
            p = if rec[k % period] == 1 { st.p_bar().clone() } else { st.h(&p) };
            let t = p.trace();
            tr.push(t);
            if t.is_nan() || t > OVERFLOW_TRACE {
                overflow = Some(k);
                break;
            }
        }
        traces.push(tr);
        overflow_at.push(overflow);
    }

    let divergent: Vec<bool> = receptions.iter().map(|r| r.iter().all(|&b| b == 0)).collect();
    let growth_factors = traces
        .iter()
        .zip(&divergent)
        .map(|(tr, &div)| {
            (div && tr.len() > period).then(|| tr[tr.len() - 1] / tr[tr.len() - 1 - period])
        })
        .collect();
    let full_periods = horizon / period;
    let periodic_average = if full_periods < 2 {
        PeriodicAverage::TransientOnly
    } else {
        let window = period..full_periods * period;
        let per_sensor = traces
            .iter()
            .zip(&divergent)
            .map(|(tr, &div)| {
                if div || tr.len() < window.end {
                    Cost::Divergent
                } else {
                    Cost::Finite(tr[window.clone()].iter().sum::<f64>() / window.len() as f64)
                }
            })
            .collect();
        PeriodicAverage::Report(CostReport::from_per_sensor(per_sensor))
    };
    let running_means = traces.iter().map(|t| running_mean(t)).collect();
    Ok(CovarianceSeries {
        horizon,
        period,
        traces,
        running_means,
        divergent,
        overflow_at,
        growth_factors,
        periodic_average,
    })
}

/// Exact remote covariance traces of `sched` under `attack`.
pub fn exact_covariance_series(
    states: &[SteadyState],
    sched: &Schedule,
    attack: &ShiftTuple,
    cfg: &SimConfig,
) -> Result<CovarianceSeries> {
    let receptions = attacked_reception(sched, attack)?;
    covariance_series_from_receptions(states, &receptions, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackModel {
    /// Every shift drawn independently and uniformly from `0..T`.
    Uniform,
    Fixed(ShiftTuple),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub horizon: usize,
    /// Trial mean of the running mean of the total trace.
    pub mean_running_cost: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Exact periodic cost of each trial's attacked reception pattern.
    pub long_run_costs: Vec<Cost>,
    pub long_run_mean: Cost,
    pub long_run_half_width: Option<f64>,
    pub long_run_std_error: Option<f64>,
}

/// Summation over a balanced binary tree whose shape depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Generator for trial `trial`: the master seed with the trial index as stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

struct Trial {
    total_running: Vec<f64>,
    long_run: Cost,
}

/// Averages costs over seeded trials of random defenses and attacks.
///
/// With `resample_sigma` each trial rebuilds the policy set from fresh random
/// interleaving vectors of the same duty factors. Results do not depend on
/// thread scheduling.
pub fn monte_carlo_expected_cost(
    states: &[SteadyState],
    ps: &PolicySet,
    attack_model: &AttackModel,
    resample_sigma: bool,
    cfg: &SimConfig,
) -> Result<MonteCarloSummary> {
    cfg.check()?;
    if ps.num_sensors() != states.len() {
        return Err(Error::invalid(format!(
            "policy set has {} rows for {} systems",
            ps.num_sensors(),
            states.len()
        )));
    }
    if let AttackModel::Fixed(t) = attack_model {
        t.check(ps.num_sensors(), ps.period())?;
    }
    let trials: Vec<Trial> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(cfg.seed, trial);
            let policies = if resample_sigma {
                let sigma = random_sigma(ps.factors(), &mut rng)?;
                construct_shift_invariant(ps.factors(), Some(&sigma))?
            } else {
                ps.clone()
            };
            let attack = match attack_model {
                AttackModel::Uniform => random_attack_with(&mut rng, policies.period(), policies.num_sensors())?,
                AttackModel::Fixed(t) => t.clone(),
            };
            let sched = policies.to_schedule();
            let receptions = attacked_reception(&sched, &attack)?;
            let series = covariance_series_from_receptions(states, &receptions, cfg)?;
            let long_run = average_cost(&receptions, states)?.total;
            Ok(Trial {
                total_running: series.total_running_mean(),
                long_run,
            })
        })
        .collect::<Result<_>>()?;

    let len = trials.iter().map(|t| t.total_running.len()).min().unwrap_or(0);
    let (mean_running_cost, half_width) = (0..len)
        .map(|k| {
            let column: Vec<f64> = trials.iter().map(|t| t.total_running[k]).collect();
            let (m, se) = mean_and_std_error(&column);
            (m, Z_95 * se)
        })
        .unzip();
    let long_run_costs: Vec<Cost> = trials.iter().map(|t| t.long_run).collect();
    let finite: Option<Vec<f64>> = long_run_costs.iter().map(|c| c.value()).collect();
    let (long_run_mean, long_run_std_error) = match finite {
        Some(vals) => {
            let (m, se) = mean_and_std_error(&vals);
            (Cost::Finite(m), Some(se))
        }
        None => (Cost::Divergent, None),
    };
    Ok(MonteCarloSummary {
        trials: cfg.trials,
        horizon: cfg.horizon,
        mean_running_cost,
        half_width,
        long_run_costs,
        long_run_mean,
        long_run_half_width: long_run_std_error.map(|se| Z_95 * se),
        long_run_std_error,
    })
}

/// One sensor's sampled run.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub local_estimates: Vec<DVector<f64>>,
    pub remote_estimates: Vec<DVector<f64>>,
    /// `‖x(k) − x̂_remote(k)‖²`.
    pub squared_errors: Vec<f64>,
}

/// Square-root factor `L` with `L Lᵀ = m` for a symmetric PSD `m`.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

fn gaussian<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(factor.ncols(), (0..factor.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    factor * z
}

fn simulate_one<R: Rng + ?Sized>(
    sys: &LinearSystem,
    st: &SteadyState,
    reception: &[u8],
    horizon: usize,
    rng: &mut R,
) -> Result<SensorTrajectory> {
    let q_half = psd_factor(sys.q());
    let r_half = psd_factor(sys.r());
    // local error starts at the steady covariance; both estimators agree
    let mut x = gaussian(&psd_factor(st.p_bar()), rng);
    let mut x_local = DVector::zeros(sys.state_dim());
    let mut p_local = st.p_bar().clone();
    let mut x_remote = x_local.clone();
    let mut out = SensorTrajectory {
        states: Vec::with_capacity(horizon),
        measurements: Vec::with_capacity(horizon),
        local_estimates: Vec::with_capacity(horizon),
        remote_estimates: Vec::with_capacity(horizon),
        squared_errors: Vec::with_capacity(horizon),
    };
    let period = reception.len();
    for k in 0..horizon {
        x = sys.a() * &x + gaussian(&q_half, rng);
        let y = sys.c() * &x + gaussian(&r_half, rng);
        let (xl, pl) = local_kalman_update(sys, &x_local, &p_local, &y)?;
        x_local = xl;
        p_local = pl;
        x_remote = if reception[k % period] == 1 {
            x_local.clone()
        } else {
            sys.a() * &x_remote
        };
        out.squared_errors.push((&x - &x_remote).norm_squared());
        out.states.push(x.clone());
        out.measurements.push(y);
        out.local_estimates.push(x_local.clone());
        out.remote_estimates.push(x_remote.clone());
    }
    Ok(out)
}

fn check_systems(systems: &[LinearSystem], states: &[SteadyState]) -> Result<()> {
    if systems.len() != states.len() {
        return Err(Error::invalid(format!(
            "{} systems with {} steady states",
            systems.len(),
            states.len()
        )));
    }
    Ok(())
}

fn trajectories_with<R: Rng + ?Sized>(
    systems: &[LinearSystem],
    states: &[SteadyState],
    receptions: &[BinarySeq],
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<SensorTrajectory>> {
    systems
        .iter()
        .zip(states)
        .zip(receptions)
        .map(|((sys, st), rec)| simulate_one(sys, st, rec, horizon, rng))
        .collect()
}

/// One sampled run per sensor, seeded by `cfg.seed`; starts from steady state.
pub fn state_trajectory_sim(
    systems: &[LinearSystem],
    states: &[SteadyState],
    sched: &Schedule,
    attack: &ShiftTuple,
    cfg: &SimConfig,
) -> Result<Vec<SensorTrajectory>> {
    cfg.check()?;
    check_systems(systems, states)?;
    let receptions = attacked_reception(sched, attack)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    trajectories_with(systems, states, &receptions, cfg.horizon, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Per-sensor, per-slot remote squared error averaged over `cfg.trials` runs.
pub fn empirical_remote_mse(
    systems: &[LinearSystem],
    states: &[SteadyState],
    sched: &Schedule,
    attack: &ShiftTuple,
    cfg: &SimConfig,
) -> Result<Vec<Vec<MseEstimate>>> {
    cfg.check()?;
    check_systems(systems, states)?;
    let receptions = attacked_reception(sched, attack)?;
    let runs: Vec<Vec<SensorTrajectory>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(cfg.seed, trial);
            trajectories_with(systems, states, &receptions, cfg.horizon, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok((0..systems.len())
        .map(|i| {
            (0..cfg.horizon)
                .map(|k| {
                    let column: Vec<f64> = runs.iter().map(|r| r[i].squared_errors[k]).collect();
                    let (mean, std_error) = mean_and_std_error(&column);
                    MseEstimate { mean, std_error }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems_io::bundled_systems;
    use proptest::prelude::*;

    fn bundled_states() -> Vec<SteadyState> {
        bundled_systems().iter().map(|s| SteadyState::solve(s).unwrap()).collect()
    }

    fn reference_schedule() -> Schedule {
        Schedule::new(vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0, 0, 1).is_err());
        assert!(SimConfig::new(1, 0, 0).is_err());
    }

    #[test]
    fn always_received_is_constant() {
        let states = bundled_states();
        let rec = vec![vec![1u8]; 3];
        let s = covariance_series_from_receptions(&states, &rec, &SimConfig::new(20, 0, 1).unwrap()).unwrap();
        for (tr, st) in s.traces.iter().zip(&states) {
            assert!(tr.iter().all(|&t| (t - st.p_bar().trace()).abs() < 1e-12));
        }
    }

    #[test]
    fn reference_schedule_cycles_and_matches_cost() {
        let states = bundled_states();
        let sched = reference_schedule();
        let cfg = SimConfig::new(300, 0, 1).unwrap();
        let s = exact_covariance_series(&states, &sched, &ShiftTuple::zero(3), &cfg).unwrap();
        for tr in &s.traces {
            for k in 6..tr.len() {
                assert!((tr[k] - tr[k - 3]).abs() < 1e-9);
            }
        }
        let closed = average_cost(&crate::scheduling::reception_from_schedule(&sched), &states).unwrap();
        let PeriodicAverage::Report(r) = &s.periodic_average else {
            panic!("expected a periodic report")
        };
        assert!((r.total.value().unwrap() - closed.total.value().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn optimal_attack_diverges_two_sensors() {
        let states = bundled_states();
        let cfg = SimConfig::new(60, 0, 1).unwrap();
        let attack = ShiftTuple::new(vec![0, 0, 2]);
        let s = exact_covariance_series(&states, &reference_schedule(), &attack, &cfg).unwrap();
        assert_eq!(s.divergent, vec![false, true, true]);
        for i in [1, 2] {
            assert!(s.traces[i].windows(2).all(|w| w[1] > w[0]));
            assert!(s.growth_factors[i].unwrap() > 1.0);
        }
        assert!(s.growth_factors[0].is_none());
        assert_eq!(s.periodic_average, PeriodicAverage::Report(CostReport::from_per_sensor(vec![
            match &s.periodic_average { PeriodicAverage::Report(r) => r.per_sensor[0], _ => unreachable!() },
            Cost::Divergent,
            Cost::Divergent,
        ])));
    }

    #[test]
    fn overflow_truncates_series() {
        let states = bundled_states();
        let rec = vec![vec![1u8], vec![0u8], vec![1u8]];
        let s = covariance_series_from_receptions(&states, &rec, &SimConfig::new(100_000, 0, 1).unwrap()).unwrap();
        let k = s.overflow_at[1].expect("sensor 1 should overflow");
        assert_eq!(s.traces[1].len(), k + 1);
        assert!(s.traces[1].iter().all(|t| t.is_finite()));
        assert_eq!(s.traces[0].len(), 100_000);
    }

    #[test]
    fn short_horizon_is_transient_only() {
        let states = bundled_states();
        let s = exact_covariance_series(
            &states,
            &reference_schedule(),
            &ShiftTuple::zero(3),
            &SimConfig::new(5, 0, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(s.periodic_average, PeriodicAverage::TransientOnly);
        assert_eq!(serde_json::to_value(&s.periodic_average).unwrap(), "transient-only");
    }

    #[test]
    fn custom_initial_covariance_is_forgotten_after_reception() {
        let states = bundled_states();
        let big: Vec<DMatrix<f64>> = states.iter().map(|s| s.p_bar() * 50.0).collect();
        let cfg = SimConfig::new(30, 0, 1).unwrap().with_initial(InitialCovariance::Custom(big));
        let warm = exact_covariance_series(&states, &reference_schedule(), &ShiftTuple::zero(3), &cfg).unwrap();
        let cold = exact_covariance_series(
            &states,
            &reference_schedule(),
            &ShiftTuple::zero(3),
            &SimConfig::new(30, 0, 1).unwrap(),
        )
        .unwrap();
        assert!(warm.traces[0][0] > cold.traces[0][0]);
        for i in 0..3 {
            assert!((warm.traces[i][10] - cold.traces[i][10]).abs() < 1e-9);
        }
        let bad = SimConfig::new(3, 0, 1)
            .unwrap()
            .with_initial(InitialCovariance::Custom(vec![DMatrix::zeros(1, 1); 3]));
        assert!(exact_covariance_series(&states, &reference_schedule(), &ShiftTuple::zero(3), &bad).is_err());
    }

    #[test]
    fn single_trial_matches_exact_series() {
        let states = bundled_states();
        let ps = crate::protocol_sequences::shortest_period_policies(3).unwrap();
        let attack = ShiftTuple::new(vec![0, 3, 5]);
        let cfg = SimConfig::new(64, 9, 1).unwrap();
        let mc = monte_carlo_expected_cost(&states, &ps, &AttackModel::Fixed(attack.clone()), false, &cfg).unwrap();
        let exact = exact_covariance_series(&states, &ps.to_schedule(), &attack, &cfg).unwrap();
        assert_eq!(mc.mean_running_cost, exact.total_running_mean());
        assert_eq!(mc.half_width, vec![0.0; 64]);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let states = bundled_states();
        let third = crate::protocol_sequences::RationalDutyFactor::new(1, 3).unwrap();
        let ps = construct_shift_invariant(&[third; 3], None).unwrap();
        let cfg = SimConfig::new(60, 17, 24).unwrap();
        let a = monte_carlo_expected_cost(&states, &ps, &AttackModel::Uniform, true, &cfg).unwrap();
        let b = monte_carlo_expected_cost(&states, &ps, &AttackModel::Uniform, true, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = monte_carlo_expected_cost(&states, &ps, &AttackModel::Uniform, true, &SimConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a.long_run_costs, c.long_run_costs);
    }

    #[test]
    fn pairwise_sum_shape() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
        let (m, se) = mean_and_std_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_replay_is_identical() {
        let systems = bundled_systems();
        let states = bundled_states();
        let cfg = SimConfig::new(25, 5, 1).unwrap();
        let a = state_trajectory_sim(&systems, &states, &reference_schedule(), &ShiftTuple::zero(3), &cfg).unwrap();
        let b = state_trajectory_sim(&systems, &states, &reference_schedule(), &ShiftTuple::zero(3), &cfg).unwrap();
        assert_eq!(a, b);
        // the remote estimate is the local one exactly when a packet lands
        for (i, traj) in a.iter().enumerate() {
            for k in 0..25 {
                if reference_schedule().row(i)[k % 3] == 1 {
                    assert_eq!(traj.remote_estimates[k], traj.local_estimates[k]);
                }
            }
        }
    }

    #[test]
    fn empirical_mse_tracks_trace_after_reception() {
        let systems = vec![bundled_systems().remove(0)];
        let states = vec![SteadyState::solve(&systems[0]).unwrap()];
        // sensor receives every third slot: slot 2, then drops at slots 3 and 4
        let sched = Schedule::new(vec![vec![0, 0, 1]]).unwrap();
        let cfg = SimConfig::new(6, 0, 10_000).unwrap();
        let mse = empirical_remote_mse(&systems, &states, &sched, &ShiftTuple::zero(1), &cfg).unwrap();
        for (k, lag) in [(2, 0), (3, 1), (4, 2)] {
            let est = mse[0][k];
            let expected = states[0].trace(lag);
            assert!(
                (est.mean - expected).abs() < 3.0 * est.std_error,
                "slot {k}: {} vs {expected} (se {})",
                est.mean,
                est.std_error
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn extra_collision_never_helps(
            rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 5), 3),
            flip in (0usize..3, 0usize..5),
        ) {
            let states = bundled_states();
            let mut worse = rows.clone();
            worse[flip.0][flip.1] = 0;
            let cfg = SimConfig::new(40, 0, 1).unwrap();
            let a = covariance_series_from_receptions(&states, &rows, &cfg).unwrap();
            let b = covariance_series_from_receptions(&states, &worse, &cfg).unwrap();
            for i in 0..3 {
                let n = a.traces[i].len().min(b.traces[i].len());
                for k in 0..n {
                    prop_assert!(b.traces[i][k] >= a.traces[i][k] - 1e-9);
                }
            }
        }

        #[test]
        fn bounded_iff_received(rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 4), 3)) {
            let states = bundled_states();
            let cfg = SimConfig::new(400, 0, 1).unwrap();
            let s = covariance_series_from_receptions(&states, &rows, &cfg).unwrap();
            for i in 0..3 {
                let received = rows[i].contains(&1);
                prop_assert_eq!(s.divergent[i], !received);
                let last = *s.traces[i].last().unwrap();
                let first = s.traces[i][0];
                if received {
                    prop_assert!(last <= states[i].trace(4) + 1e-9);
                } else {
                    prop_assert!(last > 10.0 * first);
                }
            }
        }
    }
}
