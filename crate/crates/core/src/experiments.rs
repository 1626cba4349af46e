//! Experiment runners that emit figure data as CSV: angle grids, realignment
//! curves, stability curves and single-episode traces.
//!
//! Work is spread over the rayon pool; rows always come out in grid or
//! checkpoint order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{CurvePoint, Policy, StabilityResult, Trajectory};
use crate::error::{Error, Result};
use crate::game::{exact_metrics_from, jain_index, play_turn_with, pondered_index, MachineConfig, RewardLedger};
use crate::qcore::{rotated_distribution, AngleConfig, RngSeed, StateVector};

/// Bumped whenever a CSV column is added, removed, renamed or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Angles swept by one player: `start`, `start + step`, … strictly below `stop`,
/// or a single fixed value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisSpec {
    Fixed(f64),
    Range { start: f64, stop: f64, step: f64 },
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            AxisSpec::Fixed(v) if v.is_finite() => Ok(vec![v]),
            AxisSpec::Fixed(v) => Err(Error::invalid(format!("angle {v} is not finite"))),
            AxisSpec::Range { start, stop, step } => {
                if !(step > 0.0) || !(stop > start) || !start.is_finite() || !stop.is_finite() {
                    return Err(Error::invalid(format!("bad range {start}:{stop}:{step}")));
                }
                let k = (stop - start) / step;
                if (k - k.round()).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "step {step} does not divide the range {start}..{stop} evenly"
                    )));
                }
                Ok((0..k.round() as usize).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

impl FromStr for AxisSpec {
    type Err = Error;

    /// `"45"` or `"start:stop:step"` in degrees.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad angle {t:?} in {s:?}")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => Ok(AxisSpec::Fixed(num(v)?)),
            [a, b, c] => {
                let axis = AxisSpec::Range {
                    start: num(a)?,
                    stop: num(b)?,
                    step: num(c)?,
                };
                axis.values()?;
                Ok(axis)
            }
            _ => Err(Error::invalid(format!("axis {s:?} is neither a value nor start:stop:step"))),
        }
    }
}

impl fmt::Display for AxisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisSpec::Fixed(v) => write!(f, "{v}"),
            AxisSpec::Range { start, stop, step } => write!(f, "{start}:{stop}:{step}"),
        }
    }
}

/// Comma-separated axis list, one entry per player.
pub fn parse_axes(s: &str) -> Result<Vec<AxisSpec>> {
    s.split(',').map(str::parse).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub trials: usize,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub state: StateVector<f64>,
    pub machines: MachineConfig,
    pub axes: Vec<AxisSpec>,
    pub monte_carlo: Option<MonteCarloSpec>,
    pub seed: RngSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloColumns {
    pub pondered_mean: Option<f64>,
    pub pondered_stderr: Option<f64>,
    pub jain_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub angles_degrees: Vec<f64>,
    pub expected_rewards: Vec<f64>,
    pub total_reward: f64,
    pub jain: f64,
    pub conflict: f64,
    pub pondered_exact: Option<f64>,
    pub monte_carlo: Option<MonteCarloColumns>,
}

impl GridSpec {
    fn points(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.state.n_players();
        if self.axes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.axes.len(),
            });
        }
        let values: Vec<Vec<f64>> = self.axes.iter().map(AxisSpec::values).collect::<Result<_>>()?;
        let mut points = vec![Vec::with_capacity(n)];
        for axis in &values {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }
}

fn grid_row(spec: &GridSpec, index: usize, angles: Vec<f64>) -> Result<GridRow> {
    let dist = rotated_distribution(&spec.state, &AngleConfig::from_degrees(&angles)?)?;
    let exact = exact_metrics_from(&dist, &spec.machines);
    let monte_carlo = spec.monte_carlo.map(|mc| {
        let seed = spec.seed.substream(index as u64);
        let reps: Vec<RewardLedger> = (0..mc.repetitions)
            .map(|r| {
                let mut rng = seed.substream(r as u64).rng();
                let mut ledger = RewardLedger::new(spec.state.n_players());
                for _ in 0..mc.trials {
                    ledger.record(&play_turn_with(&dist, &spec.machines, &mut rng));
                }
                ledger
            })
            .collect();
        let pondered = crate::agents::MeanStderr::of(reps.iter().filter_map(pondered_index));
        let jain = crate::agents::MeanStderr::of(reps.iter().map(|l| jain_index(&l.rewards)));
        MonteCarloColumns {
            pondered_mean: (pondered.samples > 0).then_some(pondered.mean),
            pondered_stderr: (pondered.samples > 0).then_some(pondered.stderr),
            jain_mean: jain.mean,
        }
    });
    Ok(GridRow {
        angles_degrees: angles,
        expected_rewards: exact.expected_rewards,
        total_reward: exact.total,
        jain: exact.jain,
        conflict: exact.conflict,
        pondered_exact: exact.pondered,
        monte_carlo,
    })
}

/// Metrics at every grid point, in row-major order (last player fastest).
pub fn run_grid(spec: &GridSpec) -> Result<Vec<GridRow>> {
    if let Some(mc) = spec.monte_carlo {
        if mc.trials == 0 || mc.repetitions == 0 {
            return Err(Error::invalid("Monte Carlo trials and repetitions must be >= 1"));
        }
    }
    spec.points()?
        .into_par_iter()
        .enumerate()
        .map(|(i, angles)| grid_row(spec, i, angles))
        .collect()
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

pub fn grid_header(n_players: usize, monte_carlo: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=n_players).map(|j| format!("theta{j}_deg")).collect();
    h.extend((1..=n_players).map(|j| format!("reward{j}")));
    h.extend(["total_reward", "jain", "conflict", "pondered_exact"].map(String::from));
    if monte_carlo {
        h.extend(["mc_pondered_mean", "mc_pondered_stderr", "mc_jain_mean"].map(String::from));
    }
    h
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], n_players: usize, monte_carlo: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(grid_header(n_players, monte_carlo))?;
    for r in rows {
        let mut rec: Vec<String> = r.angles_degrees.iter().copied().map(fmt_f).collect();
        rec.extend(r.expected_rewards.iter().copied().map(fmt_f));
        rec.extend([fmt_f(r.total_reward), fmt_f(r.jain), fmt_f(r.conflict), fmt_opt(r.pondered_exact)]);
        if monte_carlo {
            match &r.monte_carlo {
                Some(mc) => rec.extend([fmt_opt(mc.pondered_mean), fmt_opt(mc.pondered_stderr), fmt_f(mc.jain_mean)]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn curve_header(n_players: usize) -> Vec<String> {
    let mut h: Vec<String> = ["turn", "episodes", "pondered_mean", "pondered_stderr"].map(String::from).to_vec();
    for j in 1..=n_players {
        h.push(format!("reward{j}_mean"));
        h.push(format!("reward{j}_stderr"));
    }
    h
}

/// Realignment convergence curve.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], n_players: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(curve_header(n_players))?;
    for p in curve {
        let mut rec = vec![
            p.turn.to_string(),
            p.pondered.samples.to_string(),
            fmt_f(p.pondered.mean),
            fmt_f(p.pondered.stderr),
        ];
        for r in &p.rewards {
            rec.push(fmt_f(r.mean));
            rec.push(fmt_f(r.stderr));
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const STABILITY_HEADER: [&str; 5] = ["turn", "player", "policy", "reward_mean", "reward_stderr"];

/// Per-player expected-reward curves in long format.
pub fn write_stability_csv<W: Write>(result: &StabilityResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STABILITY_HEADER)?;
    for p in &result.curve {
        for (j, (r, policy)) in p.rewards.iter().zip(&result.policies).enumerate() {
            w.write_record([
                p.turn.to_string(),
                (j + 1).to_string(),
                policy.to_string(),
                fmt_f(r.mean),
                fmt_f(r.stderr),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trace_header(n_players: usize) -> Vec<String> {
    let mut h = vec!["turn".to_string()];
    h.extend((1..=n_players).map(|j| format!("theta{j}_deg")));
    h.push("pondered".into());
    h.extend((1..=n_players).map(|j| format!("expected_reward{j}")));
    h.extend((1..=n_players).map(|j| format!("cumulative_reward{j}")));
    h.push("cumulative_pondered".into());
    h
}

/// One episode's checkpoints.
pub fn write_trace_csv<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    let n = trajectory.ledger.rewards.len();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    for c in &trajectory.checkpoints {
        let mut rec = vec![c.turn.to_string()];
        rec.extend(c.angles_degrees.iter().copied().map(fmt_f));
        rec.push(fmt_opt(c.pondered));
        rec.extend(c.expected_rewards.iter().copied().map(fmt_f));
        rec.extend(c.cumulative_rewards.iter().copied().map(fmt_f));
        rec.push(fmt_opt(c.cumulative_pondered));
        w.write_record(rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Policies from a comma list such as `random,passive,passive`.
pub fn parse_policies(s: &str) -> Result<Vec<Policy>> {
    s.split(',').map(str::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{regular_checkpoints, run_episode, AgentParams, EpisodeConfig, Evaluation};
    use crate::states::{psi3, singlet, Sign};

    fn singlet_grid(step: f64) -> GridSpec {
        GridSpec {
            state: singlet(),
            machines: MachineConfig::certain(),
            axes: vec![AxisSpec::Range {
                start: 0.0,
                stop: 180.0,
                step,
            }; 2],
            monte_carlo: None,
            seed: RngSeed(1),
        }
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("45".parse::<AxisSpec>().unwrap(), AxisSpec::Fixed(45.0));
        let a: AxisSpec = "0:180:5".parse().unwrap();
        assert_eq!(a.values().unwrap().len(), 36);
        assert!("0:180:7".parse::<AxisSpec>().is_err());
        assert!("0:180".parse::<AxisSpec>().is_err());
        assert!("x".parse::<AxisSpec>().is_err());
        assert_eq!(parse_axes("0:90:45,30").unwrap().len(), 2);
    }

    #[test]
    fn singlet_grid_examples() {
        let rows = run_grid(&singlet_grid(5.0)).unwrap();
        assert_eq!(rows.len(), 36 * 36);
        for r in &rows {
            assert!((r.jain - 1.0).abs() < 1e-12);
            let d = (r.angles_degrees[0] - r.angles_degrees[1]).to_radians();
            assert!((r.conflict - d.sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_wrong_axis_count() {
        let mut spec = singlet_grid(5.0);
        spec.axes.push(AxisSpec::Fixed(0.0));
        assert!(run_grid(&spec).is_err());
    }

    #[test]
    fn grid_order_is_row_major() {
        let rows = run_grid(&singlet_grid(90.0)).unwrap();
        let angles: Vec<_> = rows.iter().map(|r| r.angles_degrees.clone()).collect();
        assert_eq!(angles, vec![vec![0.0, 0.0], vec![0.0, 90.0], vec![90.0, 0.0], vec![90.0, 90.0]]);
    }

    #[test]
    fn grid_csv_golden() {
        let rows = run_grid(&singlet_grid(90.0)).unwrap();
        let mut out = Vec::new();
        write_grid_csv(&rows, 2, false, &mut out).unwrap();
        let golden = "\
theta1_deg,theta2_deg,reward1,reward2,total_reward,jain,conflict,pondered_exact
0,0,1,1,2,1,0,1
0,90,0.5,0.5,1,1,1,0.5
90,0,0.5,0.5,1,1,1,0.5
90,90,1,1,2,1,0,1
";
        // Rounding noise at 1e-16 level is the only allowed difference.
        let got = String::from_utf8(out).unwrap();
        let mut g = got.lines();
        let mut e = golden.lines();
        assert_eq!(g.next(), e.next());
        for (gl, el) in g.zip(e) {
            for (a, b) in gl.split(',').zip(el.split(',')) {
                let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
                assert!((a - b).abs() < 1e-12, "{gl} vs {el}");
            }
        }
    }

    #[test]
    fn monte_carlo_columns_are_seeded() {
        let mut spec = singlet_grid(90.0);
        spec.monte_carlo = Some(MonteCarloSpec {
            trials: 200,
            repetitions: 3,
        });
        let a = run_grid(&spec).unwrap();
        assert_eq!(a, run_grid(&spec).unwrap());
        let mut out = Vec::new();
        write_grid_csv(&a, 2, true, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().next().unwrap().ends_with("mc_pondered_mean,mc_pondered_stderr,mc_jain_mean"));
        // Aligned singlet never conflicts, so every payout is captured.
        assert_eq!(a[0].monte_carlo.as_ref().unwrap().pondered_mean, Some(1.0));
    }

    #[test]
    fn missing_pondered_is_empty_field() {
        let mut spec = singlet_grid(90.0);
        spec.machines = MachineConfig::new(0.0, 0.0).unwrap();
        let rows = run_grid(&spec).unwrap();
        let mut out = Vec::new();
        write_grid_csv(&rows, 2, false, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",0,"));
    }

    #[test]
    fn trace_csv_has_one_row_per_checkpoint() {
        let cfg = EpisodeConfig {
            state: psi3(Sign::Plus, Sign::Plus),
            machines: MachineConfig::certain(),
            policies: parse_policies("random,passive,passive").unwrap(),
            params: AgentParams::default(),
            initial_degrees: vec![0.0, 30.0, 60.0],
            horizon: 300,
            checkpoints: regular_checkpoints(100, 300),
            evaluation: Evaluation::Exact,
            seed: RngSeed(3),
        };
        let t = run_episode(&cfg).unwrap();
        let mut out = Vec::new();
        write_trace_csv(&t, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), trace_header(3).len());
    }
}
