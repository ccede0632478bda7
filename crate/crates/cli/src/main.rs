//! `schedsec`: schedules, attacks and shift-invariant defenses for remote
//! estimation over a collision channel.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use commands::Ctx;
use output::{Format, Sink};

#[derive(Parser, Debug)]
#[command(name = "schedsec", version, about, propagate_version = true)]
struct Cli {
    /// JSON file with the system matrices; the bundled three-system example when omitted.
    #[arg(long, global = true)]
    systems: Option<PathBuf>,
    /// Output directory; artifacts go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Steady-state covariances and trace ladders.
    SteadyState {
        #[arg(long, default_value_t = 16)]
        ladder: usize,
    },
    /// Exhaustive search for the cheapest collision-free schedule.
    Schedule {
        /// Candidate periods; defaults to the number of systems.
        #[arg(long, value_delimiter = ',')]
        periods: Vec<usize>,
    },
    /// Exact average cost of a schedule, optionally under a shift tuple.
    Cost {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<usize>>,
    },
    #[command(subcommand)]
    Attack(AttackCommand),
    #[command(subcommand)]
    Defend(DefendCommand),
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Covariance series, Monte Carlo cost estimates or sampled trajectories.
    Simulate(SimulateArgs),
    /// Full reference pipeline into `--out`.
    ReproducePaper {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 216)]
        horizon: usize,
    },
}

#[derive(Subcommand, Debug)]
enum AttackCommand {
    /// Cheapest shift tuple that silences some sensor.
    Optimal {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, value_enum, default_value_t = AttackMethod::Bnb)]
        method: AttackMethod,
    },
    /// Uniformly random shift tuple drawn from `--seed`.
    Random {
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Shift tuple silencing `--target`.
    Isolate {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        target: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackMethod {
    Bnb,
    BruteForce,
    Unrestricted,
}

#[derive(Subcommand, Debug)]
enum DefendCommand {
    /// Build a shift-invariant policy set.
    Construct(DefenseArgs),
    /// Closed-form cost bounds for a shift-invariant set.
    Bounds {
        #[command(flatten)]
        defense: DefenseArgs,
        /// Take the duty factors from a policy file instead.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Check a policy file for shift invariance.
    Verify(VerifyArgs),
}

#[derive(Subcommand, Debug)]
enum VerifyCommand {
    ShiftInvariance(VerifyArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Sample this many shift tuples per sensor tuple instead of enumerating.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum DefenseMode {
    SameDuty,
    ShortestPeriod,
}

#[derive(Args, Debug, Clone)]
pub struct DefenseArgs {
    #[arg(long, value_enum, default_value_t = DefenseMode::ShortestPeriod)]
    pub mode: DefenseMode,
    /// Number of sensors for the shortest-period mode.
    #[arg(short = 'n')]
    pub n: Option<usize>,
    /// Schedule whose duty factors the same-duty mode copies.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Candidate periods for the schedule search when no schedule is given.
    #[arg(long, value_delimiter = ',')]
    pub periods: Vec<usize>,
    /// Explicit duty factors such as `1/3,1/4`; overrides the mode.
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<String>>,
    /// Draw the interleaving vectors from `--seed`.
    #[arg(long)]
    pub random_sigma: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Exact,
    MonteCarlo,
    Trajectory,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimKind::Exact)]
    pub kind: SimKind,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Defense used by Monte Carlo runs when no policy file is given.
    #[arg(long, value_enum)]
    pub mode: Option<DefenseMode>,
    /// Fixed shift tuple; Monte Carlo runs draw uniform shifts when omitted.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 120)]
    pub horizon: usize,
    /// Redraw the interleaving vectors in every Monte Carlo trial.
    #[arg(long)]
    pub resample_sigma: bool,
}

/// Inconsistent or missing command-line input detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Serialize)]
struct RunRecord {
    arguments: Vec<String>,
    systems: String,
    seed: u64,
    budget: u64,
}

/// Command line without the output location, so manifests compare equal across directories.
fn recorded_arguments() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--out" {
            args.next();
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ctx = Ctx::load(cli.systems.as_deref(), cli.seed)?;
    let mut sink = Sink::new(cli.out.clone(), cli.format)?;
    match &cli.command {
        Command::SteadyState { ladder } => commands::steady_state(&mut ctx, &mut sink, *ladder)?,
        Command::Schedule { periods } => commands::schedule(&ctx, &mut sink, periods)?,
        Command::Cost { schedule, taus } => commands::cost(&ctx, &mut sink, schedule, taus.as_deref())?,
        Command::Attack(AttackCommand::Optimal { schedule, method }) => {
            commands::attack_optimal(&ctx, &mut sink, schedule, *method)?
        }
        Command::Attack(AttackCommand::Random { schedule }) => commands::attack_random(&ctx, &mut sink, schedule)?,
        Command::Attack(AttackCommand::Isolate { schedule, target }) => {
            commands::attack_isolate(&ctx, &mut sink, schedule, *target)?
        }
        Command::Defend(DefendCommand::Construct(args)) => commands::defend_construct(&ctx, &mut sink, args)?,
        Command::Defend(DefendCommand::Bounds { defense, policy }) => {
            commands::defend_bounds(&ctx, &mut sink, defense, policy.as_deref())?
        }
        Command::Defend(DefendCommand::Verify(v)) | Command::Verify(VerifyCommand::ShiftInvariance(v)) => {
            commands::verify(&ctx, &mut sink, &v.policy, v.samples)?
        }
        Command::Simulate(args) => commands::simulate(&ctx, &mut sink, args)?,
        Command::ReproducePaper { trials, horizon } => commands::reproduce(&mut ctx, &mut sink, *trials, *horizon)?,
    }
    sink.finish(&RunRecord {
        arguments: recorded_arguments(),
        systems: cli
            .systems
            .as_ref()
            .map_or_else(|| "bundled".to_string(), |p| p.display().to_string()),
        seed: cli.seed,
        budget: ctx.budget.0,
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use schedsec_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Infeasible(_) => 4,
                E::Budget { .. } => 5,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
