//! `photon-cmab`: grids, simulations, realignment and stability experiments,
//! state verification and state search.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use photon_cmab::agents::{
    realign_experiment, regular_checkpoints, run_episode, stability_experiment, AgentParams, EpisodeConfig,
    Evaluation, ExperimentSpec, Policy,
};
use photon_cmab::experiments::{
    parse_axes, parse_policies, run_grid, write_curve_csv, write_grid_csv, write_stability_csv, write_trace_csv,
    AxisSpec, GridSpec, MonteCarloSpec, CSV_SCHEMA_VERSION,
};
use photon_cmab::game::MachineConfig;
use photon_cmab::rules::{certify_on_grid, theta_grid};
use photon_cmab::solver::{search_state, SearchConfig};
use photon_cmab::states::{load_state_with_report, save_state, StateSpec};
use photon_cmab::{Error, RngSeed, StateVector};
use rand::Rng;
use serde_json::json;

const SEED_ENV: &str = "PHOTON_CMAB_SEED";

#[derive(Parser, Debug)]
#[command(name = "photon-cmab", version, about, args_override_self = true)]
struct Cli {
    /// Flat `key = value` file whose keys mirror the long flag names.
    /// Command-line flags win over file entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact (and optionally Monte Carlo) metrics over an angle grid.
    Grid(GridArgs),
    /// One episode with per-checkpoint trace.
    Simulate(SimulateArgs),
    /// Mean convergence curve of the pondered index over many episodes.
    Realign(RealignArgs),
    /// Per-player reward curves for mixed active/passive agents.
    Stability(StabilityArgs),
    /// Certify a state against the design rules; exit 1 if any rule fails.
    Verify(VerifyArgs),
    /// Numerically search for a rule-satisfying state.
    Solve(SolveArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// RNG seed.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Output file; `-` writes to stdout.
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct Machines {
    /// Success probability of machine A (selected by H).
    #[arg(long, default_value_t = 1.0)]
    p_a: f64,
    /// Success probability of machine B (selected by V).
    #[arg(long, default_value_t = 1.0)]
    p_b: f64,
}

impl Machines {
    fn config(&self) -> Result<MachineConfig, Error> {
        MachineConfig::new(self.p_a, self.p_b)
    }
}

#[derive(Args, Debug)]
struct GridArgs {
    /// singlet | psi2:<deg> | psi3[:r:i] | s4[:r] | a4:<deg>[:b] | file:<path>
    #[arg(long, default_value = "singlet")]
    state: StateSpec,
    /// Per-player axes in degrees, comma separated: `<deg>` or `start:stop:step`.
    /// Defaults to `0:180:5` for every player.
    #[arg(long)]
    angles: Option<String>,
    /// Monte Carlo turns per repetition; enables the mc_* columns.
    #[arg(long)]
    mc_trials: Option<usize>,
    #[arg(long, default_value_t = 20)]
    mc_repetitions: usize,
    #[command(flatten)]
    machines: Machines,
    #[command(flatten)]
    common: Common,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Exact,
    Mc,
}

#[derive(Args, Debug)]
struct AgentArgs {
    /// Comma-separated policy per player: random, incremental or passive.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long, default_value_t = 8)]
    memory: usize,
    #[arg(long, default_value_t = 2)]
    threshold: usize,
    /// Angle step in degrees; must divide 360.
    #[arg(long, default_value_t = 5.0)]
    step: f64,
    #[arg(long, default_value_t = 2000)]
    turns: u64,
    #[arg(long, default_value_t = 50)]
    checkpoint_every: u64,
    /// Checkpoint evaluation of the pondered index.
    #[arg(long, value_enum, default_value_t = EvalMode::Mc)]
    eval: EvalMode,
    /// Monte Carlo turns per checkpoint evaluation.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
}

impl AgentArgs {
    fn params(&self) -> AgentParams {
        AgentParams {
            memory_capacity: self.memory,
            conflict_threshold: self.threshold,
            angle_step_degrees: self.step,
        }
    }

    fn evaluation(&self) -> Evaluation {
        match self.eval {
            EvalMode::Exact => Evaluation::Exact,
            EvalMode::Mc => Evaluation::MonteCarlo { trials: self.trials },
        }
    }

    fn policies(&self, n: usize, default: Policy) -> Result<Vec<Policy>, Error> {
        match &self.policies {
            Some(s) => parse_policies(s),
            None => Ok(vec![default; n]),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "singlet")]
    state: StateSpec,
    /// Initial angle per player in degrees, comma separated; random if omitted.
    #[arg(long)]
    angles: Option<String>,
    #[command(flatten)]
    agents: AgentArgs,
    #[command(flatten)]
    machines: Machines,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct RealignArgs {
    #[arg(long, default_value = "singlet")]
    state: StateSpec,
    /// Fixed initial angles for every episode; random sets if omitted.
    #[arg(long)]
    angles: Option<String>,
    /// Number of random initial angle sets.
    #[arg(long, default_value_t = 100)]
    initial_configs: usize,
    /// Episodes per initial set.
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[command(flatten)]
    agents: AgentArgs,
    #[command(flatten)]
    machines: Machines,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[command(flatten)]
    run: RealignArgs,
    /// Also write a JSON summary of the late-checkpoint comparison here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// State file (JSON); alternatively use --state.
    path: Option<PathBuf>,
    #[arg(long, conflicts_with = "path")]
    state: Option<StateSpec>,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Rotation grid step in degrees.
    #[arg(long, default_value_t = 5.0)]
    grid_step: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    players: usize,
    #[arg(long, default_value_t = 64)]
    restarts: usize,
    #[arg(long, default_value_t = 12)]
    theta_samples: usize,
    #[arg(long, default_value_t = 400)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    w_inv: f64,
    #[arg(long, default_value_t = 1.0)]
    w_perm: f64,
    #[arg(long, default_value_t = 1.0)]
    w_mirror: f64,
    #[arg(long, default_value_t = 1.0)]
    w_conflict: f64,
    #[arg(long, default_value_t = 1.0)]
    w_helicity: f64,
    /// Objective level at which a restart counts as converged.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    /// Certification tolerance applied to the result.
    #[arg(long, default_value_t = 1e-9)]
    certify_tolerance: f64,
    /// State file to write.
    #[arg(long, short)]
    output: PathBuf,
    /// JSON report path; defaults to `<output>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

/// Failure of a command: either a failed check (exit 1) or a usage / I/O
/// problem (exit 2).
enum Failure {
    Check(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn open_output(path: &Path) -> Result<Box<dyn Write>, Failure> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Usage(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn load(spec: &StateSpec) -> Result<StateVector, Failure> {
    if let StateSpec::File(path) = spec {
        let loaded = load_state_with_report(path)?;
        if let Some(w) = &loaded.warning {
            eprintln!("warning: {w}");
        }
        return Ok(loaded.state);
    }
    Ok(spec.build()?)
}

fn parse_degrees(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("bad angle {t:?}")))
        })
        .collect()
}

fn cmd_grid(args: GridArgs) -> Result<(), Failure> {
    let state = load(&args.state)?;
    let n = state.n_players();
    let axes = match &args.angles {
        Some(s) => parse_axes(s)?,
        None => vec![
            AxisSpec::Range {
                start: 0.0,
                stop: 180.0,
                step: 5.0,
            };
            n
        ],
    };
    let monte_carlo = args.mc_trials.map(|trials| MonteCarloSpec {
        trials,
        repetitions: args.mc_repetitions,
    });
    let spec = GridSpec {
        state,
        machines: args.machines.config()?,
        axes,
        monte_carlo,
        seed: RngSeed(args.common.seed),
    };
    let rows = run_grid(&spec)?;
    let mut out = open_output(&args.common.output)?;
    write_grid_csv(&rows, n, monte_carlo.is_some(), &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let state = load(&args.state)?;
    let n = state.n_players();
    let params = args.agents.params();
    params.validate()?;
    let seed = RngSeed(args.common.seed);
    let initial = match &args.angles {
        Some(s) => parse_degrees(s)?,
        None => {
            let positions = params.positions()?;
            let mut rng = seed.substream(u64::MAX).rng();
            (0..n)
                .map(|_| rng.gen_range(0..positions) as f64 * params.angle_step_degrees)
                .collect()
        }
    };
    let config = EpisodeConfig {
        state,
        machines: args.machines.config()?,
        policies: args.agents.policies(n, Policy::Passive)?,
        params,
        initial_degrees: initial,
        horizon: args.agents.turns,
        checkpoints: regular_checkpoints(args.agents.checkpoint_every, args.agents.turns),
        evaluation: args.agents.evaluation(),
        seed,
    };
    let trajectory = run_episode(&config)?;
    let mut out = open_output(&args.common.output)?;
    write_trace_csv(&trajectory, &mut out)?;
    out.flush()?;
    Ok(())
}

fn experiment_spec(args: &RealignArgs, default_policy: Policy) -> Result<ExperimentSpec, Failure> {
    let state = load(&args.state)?;
    let n = state.n_players();
    Ok(ExperimentSpec {
        machines: args.machines.config()?,
        policies: args.agents.policies(n, default_policy)?,
        params: args.agents.params(),
        initial_degrees: args.angles.as_deref().map(parse_degrees).transpose()?,
        initial_configs: args.initial_configs,
        repetitions: args.repetitions,
        horizon: args.agents.turns,
        checkpoints: regular_checkpoints(args.agents.checkpoint_every, args.agents.turns),
        evaluation: args.agents.evaluation(),
        seed: RngSeed(args.common.seed),
        state,
    })
}

fn cmd_realign(args: RealignArgs) -> Result<(), Failure> {
    let spec = experiment_spec(&args, Policy::RandomRealign)?;
    let curve = realign_experiment(&spec)?;
    let mut out = open_output(&args.common.output)?;
    write_curve_csv(&curve, spec.state.n_players(), &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_stability(args: StabilityArgs) -> Result<(), Failure> {
    if args.run.agents.policies.is_none() {
        return Err(Failure::Usage("stability needs --policies, e.g. random,passive,passive".into()));
    }
    let spec = experiment_spec(&args.run, Policy::Passive)?;
    let result = stability_experiment(&spec)?;
    let mut out = open_output(&args.run.common.output)?;
    write_stability_csv(&result, &mut out)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        let summary = json!({
            "policies": result.policies.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "late_active": result.late_active,
            "late_passive": result.late_passive,
            "late_gap": result.late_gap,
            "passive_not_better_2sigma": result.passive_not_better(2.0),
            "seed": spec.seed.0,
        });
        write_json(path, &summary)?;
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let spec = match (&args.path, &args.state) {
        (Some(p), None) => StateSpec::File(p.clone()),
        (None, Some(s)) => s.clone(),
        _ => return Err(Failure::Usage("give a state file or --state".into())),
    };
    if !(args.grid_step > 0.0) {
        return Err(Failure::Usage("--grid-step must be positive".into()));
    }
    let state = load(&spec)?;
    let report = certify_on_grid(&state, args.tolerance, &theta_grid::<f64>(args.grid_step));
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("{text}");
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("state fails: {:?}", report.failing_rules)))
    }
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let config = SearchConfig {
        n_players: args.players,
        theta_samples: args.theta_samples,
        restarts: args.restarts,
        max_iterations: args.max_iterations,
        w_inv: args.w_inv,
        w_perm: args.w_perm,
        w_mirror: args.w_mirror,
        w_conflict: args.w_conflict,
        w_helicity: args.w_helicity,
        tolerance: args.tolerance,
    };
    let result = search_state(&config, RngSeed(args.seed))?;
    save_state(&result.state, &args.output)?;
    let certification = photon_cmab::rules::certify(&result.state, args.certify_tolerance);
    let report = json!({
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "seed": args.seed,
        "config": config,
        "objective": result.objective,
        "best_restart": result.best_restart,
        "converged_restarts": result.converged_restarts,
        "restarts": result.restarts,
        "certification": certification,
        "state_file": args.output,
    });
    let report_path = args.report.unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".report.json");
        p.into()
    });
    write_json(&report_path, &report)?;
    eprintln!(
        "objective {:.3e}, {} of {} restarts converged, certify {}",
        result.objective,
        result.converged_restarts,
        config.restarts,
        if certification.pass { "passed" } else { "FAILED" }
    );
    if certification.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("best state fails: {:?}", certification.failing_rules)))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Grid(a) => cmd_grid(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Realign(a) => cmd_realign(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Solve(a) => cmd_solve(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    // clap exits with 2 on usage errors by itself.
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
