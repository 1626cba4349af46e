//! Decentralized realignment agents and the episode / experiment runners.
//!
//! An agent only ever sees its own reward and the player count. It keeps a
//! short FIFO of conflict flags (reward exactly `1/N`) from turns where it was
//! paid, and moves its waveplate once enough conflicts pile up.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{exact_metrics_from, play_turn_with, pondered_index, MachineConfig, RewardLedger};
use crate::qcore::{rotated_distribution, AngleConfig, OutcomeDistribution, RngSeed, StateVector};

/// Tolerance for recognizing a full-conflict reward of `1/N`.
pub const CONFLICT_REWARD_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    RandomRealign,
    Incremental,
    Passive,
}

impl Policy {
    pub fn is_active(self) -> bool {
        self != Policy::Passive
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" | "random-realign" => Ok(Policy::RandomRealign),
            "incremental" => Ok(Policy::Incremental),
            "passive" => Ok(Policy::Passive),
            other => Err(Error::invalid(format!(
                "unknown policy {other:?} (expected random, incremental or passive)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::RandomRealign => "random",
            Policy::Incremental => "incremental",
            Policy::Passive => "passive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub memory_capacity: usize,
    pub conflict_threshold: usize,
    pub angle_step_degrees: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            memory_capacity: 8,
            conflict_threshold: 2,
            angle_step_degrees: 5.0,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if self.memory_capacity == 0 || self.conflict_threshold == 0 {
            return Err(Error::invalid("memory capacity and conflict threshold must be >= 1"));
        }
        self.positions().map(|_| ())
    }

    /// Number of discrete positions in `[0°, 360°)`.
    pub fn positions(&self) -> Result<usize> {
        let step = self.angle_step_degrees;
        let k = 360.0 / step;
        if !(step > 0.0) || (k - k.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!("angle step {step}° does not divide 360°")));
        }
        Ok(k.round() as usize)
    }

    /// Grid position of an angle in degrees (taken mod 360°).
    pub fn position_of(&self, degrees: f64) -> Result<usize> {
        let positions = self.positions()?;
        let k = degrees.rem_euclid(360.0) / self.angle_step_degrees;
        if !k.is_finite() || (k - k.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "angle {degrees}° is not a multiple of {}°",
                self.angle_step_degrees
            )));
        }
        Ok(k.round() as usize % positions)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub policy: Policy,
    pub params: AgentParams,
    position: usize,
    positions: usize,
    memory: VecDeque<bool>,
}

impl Agent {
    pub fn new(policy: Policy, params: AgentParams, angle_degrees: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            policy,
            params,
            position: params.position_of(angle_degrees)?,
            positions: params.positions()?,
            memory: VecDeque::with_capacity(params.memory_capacity),
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn angle_degrees(&self) -> f64 {
        self.position as f64 * self.params.angle_step_degrees
    }

    /// Conflict flags, oldest first.
    pub fn memory(&self) -> &VecDeque<bool> {
        &self.memory
    }

    pub fn conflicts(&self) -> usize {
        self.memory.iter().filter(|&&c| c).count()
    }

    /// Records a paid turn; unpaid turns carry no information and are ignored.
    pub fn observe(&mut self, own_reward: f64, n_players: usize) {
        if own_reward <= 0.0 {
            return;
        }
        let conflict = (own_reward - 1.0 / n_players as f64).abs() < CONFLICT_REWARD_TOLERANCE;
        if self.memory.len() == self.params.memory_capacity {
            self.memory.pop_front();
        }
        self.memory.push_back(conflict);
    }

    fn triggered(&self) -> bool {
        self.conflicts() >= self.params.conflict_threshold
    }

    /// Redraws the angle uniformly from the grid when triggered.
    pub fn random_realign_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        if !self.triggered() {
            return None;
        }
        self.position = rng.gen_range(0..self.positions);
        self.memory.clear();
        Some(self.angle_degrees())
    }

    /// Advances the angle by one step when triggered.
    pub fn incremental_realign_step(&mut self) -> Option<f64> {
        if !self.triggered() {
            return None;
        }
        self.position = (self.position + 1) % self.positions;
        self.memory.clear();
        Some(self.angle_degrees())
    }

    /// Applies this agent's policy; returns the new angle if it moved.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        match self.policy {
            Policy::RandomRealign => self.random_realign_step(rng),
            Policy::Incremental => self.incremental_realign_step(),
            Policy::Passive => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Evaluation {
    /// Expectation analog of the pondered index.
    Exact,
    /// Pondered index of `trials` extra turns played at the frozen angles.
    MonteCarlo { trials: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub state: StateVector<f64>,
    pub machines: MachineConfig,
    pub policies: Vec<Policy>,
    pub params: AgentParams,
    pub initial_degrees: Vec<f64>,
    pub horizon: u64,
    /// Turn counts after which the configuration is evaluated.
    pub checkpoints: Vec<u64>,
    pub evaluation: Evaluation,
    pub seed: RngSeed,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.state.n_players();
        if self.policies.len() != n || self.initial_degrees.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if self.policies.len() != n {
                    self.policies.len()
                } else {
                    self.initial_degrees.len()
                },
            });
        }
        self.params.validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if self.checkpoints.iter().any(|&c| c == 0 || c > self.horizon) {
            return Err(Error::invalid("checkpoints must lie in [1, horizon]"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("checkpoints must be strictly increasing"));
        }
        if let Evaluation::MonteCarlo { trials: 0 } = self.evaluation {
            return Err(Error::invalid("Monte Carlo evaluation needs >= 1 trial"));
        }
        Ok(())
    }
}

/// Checkpoints every `every` turns up to and including `horizon`.
pub fn regular_checkpoints(every: u64, horizon: u64) -> Vec<u64> {
    let every = every.max(1);
    let mut c: Vec<u64> = (1..=horizon / every).map(|k| k * every).collect();
    if c.last() != Some(&horizon) {
        c.push(horizon);
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub turn: u64,
    pub angles_degrees: Vec<f64>,
    /// `None` when a Monte Carlo evaluation saw no payout.
    pub pondered: Option<f64>,
    pub expected_rewards: Vec<f64>,
    /// Accumulated rewards `R_j` so far.
    pub cumulative_rewards: Vec<f64>,
    /// Pondered index of the accumulated ledger.
    pub cumulative_pondered: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub ledger: RewardLedger,
    /// Number of angle changes over the episode, all agents together.
    pub moves: u64,
}

struct DistributionCache<'a> {
    state: &'a StateVector<f64>,
    step: f64,
    map: HashMap<Vec<usize>, OutcomeDistribution<f64>>,
}

impl<'a> DistributionCache<'a> {
    fn get(&mut self, positions: Vec<usize>) -> Result<&OutcomeDistribution<f64>> {
        use std::collections::hash_map::Entry;
        match self.map.entry(positions) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => {
                let degrees: Vec<f64> = e.key().iter().map(|&p| p as f64 * self.step).collect();
                let dist = rotated_distribution(self.state, &AngleConfig::from_degrees(&degrees)?)?;
                Ok(e.insert(dist))
            }
        }
    }
}

const ENV_STREAM: u64 = 0;
const AGENT_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Plays one episode. Environment, each agent and each checkpoint evaluation
/// draw from separate substreams of the seed.
pub fn run_episode(config: &EpisodeConfig) -> Result<Trajectory> {
    config.validate()?;
    let n = config.state.n_players();
    let mut agents: Vec<Agent> = config
        .policies
        .iter()
        .zip(&config.initial_degrees)
        .map(|(&p, &a)| Agent::new(p, config.params, a))
        .collect::<Result<_>>()?;
    let mut env_rng = config.seed.substream(ENV_STREAM).rng();
    let agent_seed = config.seed.substream(AGENT_STREAM);
    let mut agent_rngs: Vec<_> = (0..n).map(|j| agent_seed.substream(j as u64).rng()).collect();
    let eval_seed = config.seed.substream(EVAL_STREAM);

    let mut cache = DistributionCache {
        state: &config.state,
        step: config.params.angle_step_degrees,
        map: HashMap::new(),
    };
    let mut ledger = RewardLedger::new(n);
    let mut checkpoints = Vec::with_capacity(config.checkpoints.len());
    let mut next = config.checkpoints.iter().peekable();
    let mut moves = 0;

    for turn in 1..=config.horizon {
        let positions: Vec<usize> = agents.iter().map(Agent::position).collect();
        let result = play_turn_with(cache.get(positions)?, &config.machines, &mut env_rng);
        ledger.record(&result);
        for ((agent, rng), &reward) in agents.iter_mut().zip(&mut agent_rngs).zip(&result.rewards) {
            agent.observe(reward, n);
            if agent.step(rng).is_some() {
                moves += 1;
            }
        }

        if next.peek() == Some(&&turn) {
            next.next();
            let positions: Vec<usize> = agents.iter().map(Agent::position).collect();
            let dist = cache.get(positions)?;
            let exact = exact_metrics_from(dist, &config.machines);
            let pondered = match config.evaluation {
                Evaluation::Exact => exact.pondered,
                Evaluation::MonteCarlo { trials } => {
                    let mut rng = eval_seed.substream(checkpoints.len() as u64).rng();
                    let mut probe = RewardLedger::new(n);
                    for _ in 0..trials {
                        probe.record(&play_turn_with(dist, &config.machines, &mut rng));
                    }
                    pondered_index(&probe)
                }
            };
            checkpoints.push(Checkpoint {
                turn,
                angles_degrees: agents.iter().map(Agent::angle_degrees).collect(),
                pondered,
                expected_rewards: exact.expected_rewards,
                cumulative_rewards: ledger.rewards.clone(),
                cumulative_pondered: pondered_index(&ledger),
            });
        }
    }
    Ok(Trajectory {
        checkpoints,
        ledger,
        moves,
    })
}

/// Many episodes: `initial_configs` seeded random starting angle sets, each
/// repeated `repetitions` times with fresh agent/environment streams.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub state: StateVector<f64>,
    pub machines: MachineConfig,
    pub policies: Vec<Policy>,
    pub params: AgentParams,
    /// Fixed starting angles; `None` draws `initial_configs` random sets.
    pub initial_degrees: Option<Vec<f64>>,
    pub initial_configs: usize,
    pub repetitions: usize,
    pub horizon: u64,
    pub checkpoints: Vec<u64>,
    pub evaluation: Evaluation,
    pub seed: RngSeed,
}

impl ExperimentSpec {
    fn initial_angles(&self, config: usize) -> Result<Vec<f64>> {
        if let Some(fixed) = &self.initial_degrees {
            return Ok(fixed.clone());
        }
        let positions = self.params.positions()?;
        let mut rng = self.seed.substream(2 * config as u64).rng();
        Ok((0..self.state.n_players())
            .map(|_| rng.gen_range(0..positions) as f64 * self.params.angle_step_degrees)
            .collect())
    }

    /// Episode configuration for one (initial set, repetition) pair.
    pub fn episode(&self, config: usize, repetition: usize) -> Result<EpisodeConfig> {
        Ok(EpisodeConfig {
            state: self.state.clone(),
            machines: self.machines,
            policies: self.policies.clone(),
            params: self.params,
            initial_degrees: self.initial_angles(config)?,
            horizon: self.horizon,
            checkpoints: self.checkpoints.clone(),
            evaluation: self.evaluation,
            seed: self.seed.substream(2 * config as u64 + 1).substream(repetition as u64),
        })
    }

    /// Runs every episode in parallel; results in (config, repetition) order.
    pub fn run(&self) -> Result<Vec<Trajectory>> {
        if self.initial_configs == 0 || self.repetitions == 0 {
            return Err(Error::invalid("initial_configs and repetitions must be >= 1"));
        }
        let reps = self.repetitions;
        (0..self.initial_configs * reps)
            .into_par_iter()
            .map(|k| run_episode(&self.episode(k / reps, k % reps)?))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl MeanStderr {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            samples: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub turn: u64,
    pub pondered: MeanStderr,
    pub rewards: Vec<MeanStderr>,
}

/// Mean ± stderr across episodes at each checkpoint. Missing pondered values
/// are left out of that checkpoint's average.
pub fn summarize(trajectories: &[Trajectory]) -> Vec<CurvePoint> {
    let Some(first) = trajectories.first() else {
        return Vec::new();
    };
    let n = first.ledger.rewards.len();
    (0..first.checkpoints.len())
        .map(|k| CurvePoint {
            turn: first.checkpoints[k].turn,
            pondered: MeanStderr::of(trajectories.iter().filter_map(|t| t.checkpoints[k].pondered)),
            rewards: (0..n)
                .map(|j| MeanStderr::of(trajectories.iter().map(|t| t.checkpoints[k].expected_rewards[j])))
                .collect(),
        })
        .collect()
}

/// Convergence curve of the instantaneous pondered index.
pub fn realign_experiment(spec: &ExperimentSpec) -> Result<Vec<CurvePoint>> {
    Ok(summarize(&spec.run()?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityResult {
    pub policies: Vec<Policy>,
    pub curve: Vec<CurvePoint>,
    /// Per-episode (mean passive − mean active) expected reward over the late
    /// checkpoints, summarized across episodes.
    pub late_gap: MeanStderr,
    pub late_active: MeanStderr,
    pub late_passive: MeanStderr,
}

impl StabilityResult {
    /// Passive players earn no more than active ones, within `sigmas` stderr.
    pub fn passive_not_better(&self, sigmas: f64) -> bool {
        self.late_gap.mean <= sigmas * self.late_gap.stderr
    }
}

/// Fraction of trailing checkpoints that count as "late".
pub const LATE_FRACTION: f64 = 0.2;

/// Per-player expected-reward curves for a mix of active and passive agents.
pub fn stability_experiment(spec: &ExperimentSpec) -> Result<StabilityResult> {
    let active: Vec<usize> = (0..spec.policies.len()).filter(|&j| spec.policies[j].is_active()).collect();
    let passive: Vec<usize> = (0..spec.policies.len()).filter(|&j| !spec.policies[j].is_active()).collect();
    if active.is_empty() || passive.is_empty() {
        return Err(Error::invalid("stability needs at least one active and one passive player"));
    }
    let trajectories = spec.run()?;
    let n_cp = spec.checkpoints.len();
    let late = ((n_cp as f64 * LATE_FRACTION).ceil() as usize).clamp(1, n_cp.max(1));
    let group_mean = |t: &Trajectory, group: &[usize]| {
        let cps = &t.checkpoints[n_cp - late..];
        cps.iter()
            .flat_map(|c| group.iter().map(move |&j| c.expected_rewards[j]))
            .sum::<f64>()
            / (cps.len() * group.len()) as f64
    };
    let per_episode: Vec<(f64, f64)> = trajectories
        .iter()
        .map(|t| (group_mean(t, &active), group_mean(t, &passive)))
        .collect();
    Ok(StabilityResult {
        policies: spec.policies.clone(),
        curve: summarize(&trajectories),
        late_gap: MeanStderr::of(per_episode.iter().map(|(a, p)| p - a)),
        late_active: MeanStderr::of(per_episode.iter().map(|(a, _)| *a)),
        late_passive: MeanStderr::of(per_episode.iter().map(|(_, p)| *p)),
    })
}
