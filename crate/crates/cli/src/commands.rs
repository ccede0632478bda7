use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use schedsec_core::attack::{
    attacked_reception, blocked_sensors, bnb_optimal_attack, brute_force_optimal_attack, isolate_sensor_attack,
    random_attack, AttackSpace, ShiftTuple,
};
use schedsec_core::lti_estimation::{matrix_rows, LinearSystem, SteadyState};
use schedsec_core::protocol_sequences::{
    bounds, construct_shift_invariant, factors_of_schedule, is_shift_invariant, random_sigma,
    sample_shift_invariance, shortest_period_policies, BoundsReport, InvarianceReport, PolicySet,
    RationalDutyFactor,
};
use schedsec_core::scheduling::{average_cost, optimal_schedule_search, Cost, CostReport, Schedule};
use schedsec_core::simulation::{
    empirical_remote_mse, exact_covariance_series, monte_carlo_expected_cost, state_trajectory_sim, trial_rng,
    AttackModel, CovarianceSeries, MonteCarloSummary, SimConfig,
};
use schedsec_core::Budget;

use crate::output::{bits, Sink, Table};
use crate::{AttackMethod, DefenseArgs, DefenseMode, SimKind, SimulateArgs, UsageError};

pub struct Ctx {
    pub systems: Vec<LinearSystem>,
    pub states: Vec<SteadyState>,
    pub seed: u64,
    pub budget: Budget,
}

impl Ctx {
    pub fn load(path: Option<&Path>, seed: u64) -> Result<Self> {
        let systems = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                schedsec_core::systems_io::parse_systems(&text)?
            }
            None => schedsec_core::systems_io::bundled_systems(),
        };
        for (i, sys) in systems.iter().enumerate() {
            for w in sys.warnings() {
                log::warn!("system {i}: {w}");
            }
        }
        let states = systems
            .iter()
            .enumerate()
            .map(|(i, s)| SteadyState::solve(s).with_context(|| format!("steady state of system {i}")))
            .collect::<Result<_>>()?;
        Ok(Ctx {
            systems,
            states,
            seed,
            budget: Budget::from_env()?,
        })
    }

    fn n(&self) -> usize {
        self.systems.len()
    }

    fn check_sensors(&self, count: usize, what: &str) -> Result<()> {
        if count != self.n() {
            return Err(schedsec_core::Error::InvalidArgument(format!(
                "{what} has {count} sensors but {} systems are loaded",
                self.n()
            ))
            .into());
        }
        Ok(())
    }
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text).map_err(schedsec_core::Error::from)?;
    Ok(value)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn cost_table(report: &CostReport) -> Table {
    let mut t = Table::new(&["sensor_index", "average_trace", "divergent"]);
    for (i, c) in report.per_sensor.iter().enumerate() {
        let (value, div) = match c {
            Cost::Finite(v) => (num(*v), "false"),
            Cost::Divergent => (String::new(), "true"),
        };
        t.push(vec![i.to_string(), value, div.to_string()]);
    }
    t
}

fn attack_table(sched: &Schedule, attack: &ShiftTuple) -> Result<Table> {
    let blocked = blocked_sensors(sched, attack)?;
    let mut t = Table::new(&["sensor_index", "tau", "blocked"]);
    for (i, tau) in attack.taus.iter().enumerate() {
        t.push(vec![i.to_string(), tau.to_string(), blocked.contains(&i).to_string()]);
    }
    Ok(t)
}

fn series_table(series: &CovarianceSeries) -> Table {
    let mut t = Table::new(&["k", "sensor", "trace", "running_mean", "divergent_flag"]);
    for k in 0..series.horizon {
        for i in 0..series.num_sensors() {
            if let (Some(tr), Some(m)) = (series.traces[i].get(k), series.running_means[i].get(k)) {
                t.push(vec![
                    k.to_string(),
                    i.to_string(),
                    num(*tr),
                    num(*m),
                    u8::from(series.divergent[i]).to_string(),
                ]);
            }
        }
    }
    t
}

fn monte_carlo_table(mc: &MonteCarloSummary) -> Table {
    let mut t = Table::new(&["k", "mean_running_cost", "half_width"]);
    for (k, (m, h)) in mc.mean_running_cost.iter().zip(&mc.half_width).enumerate() {
        t.push(vec![k.to_string(), num(*m), num(*h)]);
    }
    t
}

fn policy_table(ps: &PolicySet) -> Table {
    let mut t = Table::new(&["sensor_index", "n", "d", "row"]);
    for (i, (f, row)) in ps.factors().iter().zip(ps.rows()).enumerate() {
        t.push(vec![i.to_string(), f.numer().to_string(), f.denom().to_string(), bits(row)]);
    }
    t
}

fn bounds_table(b: &BoundsReport) -> Table {
    let mut t = Table::new(&["sensor_index", "receptions_per_period", "lower", "upper"]);
    for i in 0..b.per_sensor_lower.len() {
        t.push(vec![
            i.to_string(),
            b.per_sensor_receptions[i].to_string(),
            num(b.per_sensor_lower[i]),
            num(b.per_sensor_upper[i]),
        ]);
    }
    t.push(vec!["total".into(), String::new(), num(b.lower), num(b.upper)]);
    t
}

fn invariance_table(r: &InvarianceReport) -> Table {
    let mut t = Table::new(&["invariant", "proven", "tuples_checked", "witness_sensors", "witness_shifts"]);
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    let (ws, wt) = r
        .witness
        .as_ref()
        .map_or((String::new(), String::new()), |w| (join(&w.sensors), join(&w.shifts)));
    t.push(vec![r.invariant.to_string(), r.proven.to_string(), r.tuples_checked.to_string(), ws, wt]);
    t
}

pub fn steady_state(ctx: &mut Ctx, sink: &mut Sink, ladder: usize) -> Result<()> {
    let mut t = Table::new(&["system", "t", "trace"]);
    let mut out = Vec::new();
    for (i, (sys, st)) in ctx.systems.iter().zip(ctx.states.iter_mut()).enumerate() {
        st.extend_to(ladder.saturating_sub(1));
        let traces = &st.trace_ladder()[..ladder.max(1)];
        for (k, tr) in traces.iter().enumerate() {
            t.push(vec![i.to_string(), k.to_string(), num(*tr)]);
        }
        out.push(json!({
            "system": i,
            "p_bar": matrix_rows(st.p_bar()),
            "trace_ladder": traces,
            "spectral_radius": sys.spectral_radius(),
            "warnings": sys.warnings(),
        }));
    }
    sink.emit("steady_state", &out, &t)
}

fn search(ctx: &Ctx, periods: &[usize]) -> Result<(Schedule, CostReport)> {
    let periods = if periods.is_empty() { vec![ctx.n()] } else { periods.to_vec() };
    Ok(optimal_schedule_search(&ctx.states, &periods, ctx.budget)?)
}

pub fn schedule(ctx: &Ctx, sink: &mut Sink, periods: &[usize]) -> Result<()> {
    let (sched, report) = search(ctx, periods)?;
    let mut t = Table::new(&["sensor_index", "row", "average_trace", "divergent"]);
    for (i, (row, c)) in sched.rows().iter().zip(&report.per_sensor).enumerate() {
        t.push(vec![
            i.to_string(),
            bits(row),
            c.value().map(num).unwrap_or_default(),
            c.is_divergent().to_string(),
        ]);
    }
    sink.emit("schedule", &json!({ "schedule": sched, "cost": report }), &t)
}

fn load_schedule(ctx: &Ctx, path: &Path) -> Result<Schedule> {
    let sched: Schedule = load_json(path)?;
    ctx.check_sensors(sched.num_sensors(), "schedule")?;
    Ok(sched)
}

fn shift_or_zero(taus: Option<&[usize]>, sched: &Schedule) -> Result<ShiftTuple> {
    let attack = taus.map_or_else(|| ShiftTuple::zero(sched.num_sensors()), |t| ShiftTuple::new(t.to_vec()));
    attack.check(sched.num_sensors(), sched.period())?;
    Ok(attack)
}

pub fn cost(ctx: &Ctx, sink: &mut Sink, schedule: &Path, taus: Option<&[usize]>) -> Result<()> {
    let sched = load_schedule(ctx, schedule)?;
    let attack = shift_or_zero(taus, &sched)?;
    let report = average_cost(&attacked_reception(&sched, &attack)?, &ctx.states)?;
    sink.emit("cost", &json!({ "attack": attack, "cost": report }), &cost_table(&report))
}

pub fn attack_optimal(ctx: &Ctx, sink: &mut Sink, schedule: &Path, method: AttackMethod) -> Result<()> {
    let sched = load_schedule(ctx, schedule)?;
    let (attack, value) = match method {
        AttackMethod::Bnb => {
            let out = bnb_optimal_attack(&sched)?;
            let attack = out
                .attack
                .clone()
                .ok_or_else(|| schedsec_core::Error::Infeasible("no sensor can be silenced".into()))?;
            let value = json!({
                "method": "branch-and-bound",
                "attack": attack,
                "spoofed_count": out.spoofed_count,
                "target": out.target,
                "blocked": blocked_sensors(&sched, &attack)?,
                "per_target_costs": out.per_target_costs(),
            });
            (attack, value)
        }
        AttackMethod::BruteForce | AttackMethod::Unrestricted => {
            let space = if method == AttackMethod::BruteForce {
                AttackSpace::TargetUnshifted
            } else {
                AttackSpace::Unrestricted
            };
            match brute_force_optimal_attack(&sched, space, ctx.budget)? {
                schedsec_core::attack::BruteForceOutcome::Blocking {
                    attack,
                    spoofed_count,
                    blocked,
                } => {
                    let value = json!({
                        "method": if space == AttackSpace::Unrestricted { "brute-force-unrestricted" } else { "brute-force" },
                        "attack": attack,
                        "spoofed_count": spoofed_count,
                        "blocked": blocked,
                    });
                    (attack, value)
                }
                schedsec_core::attack::BruteForceOutcome::NoBlockingAttack => {
                    return Err(schedsec_core::Error::Infeasible("no sensor can be silenced".into()).into())
                }
            }
        }
    };
    sink.emit("attack", &value, &attack_table(&sched, &attack)?)
}

pub fn attack_random(ctx: &Ctx, sink: &mut Sink, schedule: &Path) -> Result<()> {
    let sched = load_schedule(ctx, schedule)?;
    let attack = random_attack(sched.period(), sched.num_sensors(), ctx.seed)?;
    let report = average_cost(&attacked_reception(&sched, &attack)?, &ctx.states)?;
    let value = json!({
        "seed": ctx.seed,
        "attack": attack,
        "spoofed_count": attack.spoofed_count(),
        "blocked": blocked_sensors(&sched, &attack)?,
        "cost": report,
    });
    sink.emit("attack", &value, &attack_table(&sched, &attack)?)
}

pub fn attack_isolate(ctx: &Ctx, sink: &mut Sink, schedule: &Path, target: usize) -> Result<()> {
    let sched = load_schedule(ctx, schedule)?;
    let attack = isolate_sensor_attack(&sched, target, ctx.budget)?;
    let value = json!({
        "target": target,
        "attack": attack,
        "spoofed_count": attack.spoofed_count(),
        "blocked": blocked_sensors(&sched, &attack)?,
    });
    sink.emit("attack", &value, &attack_table(&sched, &attack)?)
}

fn parse_factor(s: &str) -> Result<RationalDutyFactor> {
    let (n, d) = s
        .split_once('/')
        .ok_or_else(|| UsageError(format!("duty factor {s:?} is not of the form n/d")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<u64>()
            .map_err(|_| UsageError(format!("duty factor {s:?} is not of the form n/d")))
    };
    Ok(RationalDutyFactor::new(parse(n)?, parse(d)?)?)
}

/// Duty factors selected by the defense arguments.
fn defense_factors(ctx: &Ctx, args: &DefenseArgs) -> Result<Vec<RationalDutyFactor>> {
    if let Some(list) = &args.factors {
        return list.iter().map(|s| parse_factor(s)).collect();
    }
    match args.mode {
        DefenseMode::ShortestPeriod => {
            let n = args.n.unwrap_or(ctx.n());
            Ok(vec![RationalDutyFactor::new(1, 2)?; n])
        }
        DefenseMode::SameDuty => {
            let sched = match &args.schedule {
                Some(p) => load_schedule(ctx, p)?,
                None => search(ctx, &args.periods)?.0,
            };
            Ok(factors_of_schedule(&sched)?)
        }
    }
}

fn build_policies(ctx: &Ctx, args: &DefenseArgs) -> Result<PolicySet> {
    let factors = defense_factors(ctx, args)?;
    if args.random_sigma {
        let mut rng = trial_rng(ctx.seed, 0);
        let sigma = random_sigma(&factors, &mut rng)?;
        Ok(construct_shift_invariant(&factors, Some(&sigma))?)
    } else if args.mode == DefenseMode::ShortestPeriod && args.factors.is_none() {
        Ok(shortest_period_policies(factors.len())?)
    } else {
        Ok(construct_shift_invariant(&factors, None)?)
    }
}

pub fn defend_construct(ctx: &Ctx, sink: &mut Sink, args: &DefenseArgs) -> Result<()> {
    let ps = build_policies(ctx, args)?;
    sink.emit("policy", &ps, &policy_table(&ps))
}

pub fn defend_bounds(ctx: &Ctx, sink: &mut Sink, args: &DefenseArgs, policy: Option<&Path>) -> Result<()> {
    let factors = match policy {
        Some(p) => load_json::<PolicySet>(p)?.factors().to_vec(),
        None => defense_factors(ctx, args)?,
    };
    ctx.check_sensors(factors.len(), "defense")?;
    let b = bounds(&factors, &ctx.states)?;
    sink.emit("bounds", &json!({ "factors": factors, "bounds": b }), &bounds_table(&b))
}

fn verify_report(ctx: &Ctx, ps: &PolicySet, samples: Option<usize>) -> Result<InvarianceReport> {
    Ok(match samples {
        Some(s) => sample_shift_invariance(ps, s, ctx.seed)?,
        None => is_shift_invariant(ps, ctx.budget)?,
    })
}

pub fn verify(ctx: &Ctx, sink: &mut Sink, policy: &Path, samples: Option<usize>) -> Result<()> {
    let ps: PolicySet = load_json(policy)?;
    let report = verify_report(ctx, &ps, samples)?;
    sink.emit("verification", &report, &invariance_table(&report))
}

fn sim_config(ctx: &Ctx, args: &SimulateArgs) -> Result<SimConfig> {
    Ok(SimConfig::new(args.horizon, ctx.seed, args.trials)?)
}

fn joined<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

pub fn simulate(ctx: &Ctx, sink: &mut Sink, args: &SimulateArgs) -> Result<()> {
    let cfg = sim_config(ctx, args)?;
    match args.kind {
        SimKind::Exact | SimKind::Trajectory => {
            let sched = match (&args.schedule, &args.policy) {
                (Some(p), _) => load_schedule(ctx, p)?,
                (None, Some(p)) => load_json::<PolicySet>(p)?.to_schedule(),
                (None, None) => search(ctx, &[])?.0,
            };
            ctx.check_sensors(sched.num_sensors(), "schedule")?;
            let attack = shift_or_zero(args.taus.as_deref(), &sched)?;
            if args.kind == SimKind::Exact {
                let series = exact_covariance_series(&ctx.states, &sched, &attack, &cfg)?;
                return sink.emit("series", &series, &series_table(&series));
            }
            let runs = state_trajectory_sim(&ctx.systems, &ctx.states, &sched, &attack, &cfg)?;
            let mse = empirical_remote_mse(&ctx.systems, &ctx.states, &sched, &attack, &cfg)?;
            let mut t = Table::new(&[
                "k",
                "sensor",
                "state",
                "local_estimate",
                "remote_estimate",
                "squared_error",
                "mean_squared_error",
                "std_error",
            ]);
            for k in 0..cfg.horizon {
                for (i, (run, m)) in runs.iter().zip(&mse).enumerate() {
                    t.push(vec![
                        k.to_string(),
                        i.to_string(),
                        joined(run.states[k].iter()),
                        joined(run.local_estimates[k].iter()),
                        joined(run.remote_estimates[k].iter()),
                        num(run.squared_errors[k]),
                        num(m[k].mean),
                        num(m[k].std_error),
                    ]);
                }
            }
            let value = json!({
                "squared_errors": runs.iter().map(|r| &r.squared_errors).collect::<Vec<_>>(),
                "empirical_mse": mse,
            });
            sink.emit("trajectory", &value, &t)
        }
        SimKind::MonteCarlo => {
            let ps = match &args.policy {
                Some(p) => load_json::<PolicySet>(p)?,
                None => build_policies(
                    ctx,
                    &DefenseArgs {
                        mode: args.mode.unwrap_or(DefenseMode::ShortestPeriod),
                        n: None,
                        schedule: args.schedule.clone(),
                        periods: Vec::new(),
                        factors: None,
                        random_sigma: false,
                    },
                )?,
            };
            ctx.check_sensors(ps.num_sensors(), "policy set")?;
            let model = match &args.taus {
                Some(t) => AttackModel::Fixed(ShiftTuple::new(t.clone())),
                None => AttackModel::Uniform,
            };
            let mc = monte_carlo_expected_cost(&ctx.states, &ps, &model, args.resample_sigma, &cfg)?;
            let b = bounds(ps.factors(), &ctx.states)?;
            sink.emit("monte_carlo", &json!({ "summary": mc, "bounds": b }), &monte_carlo_table(&mc))
        }
    }
}

#[derive(Serialize)]
struct DefenseSummary {
    name: &'static str,
    policy: PolicySet,
    invariance: InvarianceReport,
    bounds: BoundsReport,
    monte_carlo_long_run_mean: Cost,
    monte_carlo_half_width: Option<f64>,
}

/// Runs the full reference pipeline into the output directory.
pub fn reproduce(ctx: &mut Ctx, sink: &mut Sink, trials: usize, horizon: usize) -> Result<()> {
    if sink.dir().is_none() {
        bail!(UsageError("reproduce-paper needs --out <dir>".into()));
    }
    sink.json("steady_state", &json!(ctx
        .states
        .iter()
        .map(|s| json!({ "p_bar": matrix_rows(s.p_bar()), "trace_ladder": &s.trace_ladder()[..16] }))
        .collect::<Vec<_>>()))?;

    let (sched, report) = optimal_schedule_search(&ctx.states, &[3], ctx.budget)?;
    sink.json("schedule", &json!({ "schedule": sched, "cost": report }))?;
    sink.csv("schedule_cost", &cost_table(&report))?;

    let bnb = bnb_optimal_attack(&sched)?;
    let attack = bnb
        .attack
        .clone()
        .ok_or_else(|| schedsec_core::Error::Infeasible("no sensor can be silenced".into()))?;
    let brute = brute_force_optimal_attack(&sched, AttackSpace::TargetUnshifted, ctx.budget)?;
    let reference = ShiftTuple::new(vec![0, 0, 2]);
    let reference_check = if reference.check(sched.num_sensors(), sched.period()).is_ok() {
        json!({
            "attack": reference,
            "spoofed_count": reference.spoofed_count(),
            "blocked": blocked_sensors(&sched, &reference)?,
        })
    } else {
        serde_json::Value::Null
    };
    sink.json(
        "attack",
        &json!({
            "spoofed_count": bnb.spoofed_count,
            "attack": attack,
            "target": bnb.target,
            "blocked": blocked_sensors(&sched, &attack)?,
            "per_target_costs": bnb.per_target_costs(),
            "brute_force": brute,
            "reference_tuple": reference_check,
        }),
    )?;

    let cfg = SimConfig::new(horizon, ctx.seed, 1)?;
    let clean = exact_covariance_series(&ctx.states, &sched, &ShiftTuple::zero(sched.num_sensors()), &cfg)?;
    sink.csv("series_no_attack", &series_table(&clean))?;
    let attacked = exact_covariance_series(&ctx.states, &sched, &attack, &cfg)?;
    sink.csv("series_optimal_attack", &series_table(&attacked))?;
    let attacked_ref = exact_covariance_series(&ctx.states, &sched, &reference, &cfg)?;
    sink.csv("series_reference_attack", &series_table(&attacked_ref))?;

    let mc_cfg = SimConfig::new(horizon, ctx.seed, trials)?;
    let mut defenses = Vec::new();
    for (name, ps) in [
        ("same_duty", construct_shift_invariant(&factors_of_schedule(&sched)?, None)?),
        ("shortest_period", shortest_period_policies(sched.num_sensors())?),
    ] {
        let invariance = is_shift_invariant(&ps, ctx.budget)?;
        let b = bounds(ps.factors(), &ctx.states)?;
        let mc = monte_carlo_expected_cost(&ctx.states, &ps, &AttackModel::Uniform, true, &mc_cfg)?;
        sink.csv(&format!("monte_carlo_{name}"), &monte_carlo_table(&mc))?;
        defenses.push(DefenseSummary {
            name,
            policy: ps,
            invariance,
            bounds: b,
            monte_carlo_long_run_mean: mc.long_run_mean,
            monte_carlo_half_width: mc.long_run_half_width,
        });
    }
    sink.json("defenses", &defenses)?;
    sink.json(
        "summary",
        &json!({
            "optimal_cost": report.total,
            "spoofed_count": bnb.spoofed_count,
            "attack": attack,
            "defense_long_run_means": defenses
                .iter()
                .map(|d| json!({ "name": d.name, "period": d.policy.period(), "mean": d.monte_carlo_long_run_mean, "lower": d.bounds.lower, "upper": d.bounds.upper }))
                .collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}
