//! Two-machine competitive bandit: reward splitting, accounting, and the
//! fairness / performance indices.
//!
//! A player measuring `H` selects machine A, `V` selects machine B. Each machine
//! pays 1 with its own probability and the payout is split evenly among the
//! players that selected it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{player_bit, rotated_distribution, sample_outcome, AngleConfig, OutcomeDistribution, StateVector};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Machine {
    A,
    B,
}

/// Machine selections encoded by a joint outcome.
pub fn selections(outcome: usize, n_players: usize) -> Vec<Machine> {
    (0..n_players)
        .map(|j| if player_bit(outcome, n_players, j) { Machine::B } else { Machine::A })
        .collect()
}

/// Bernoulli success probabilities of the two machines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub p_a: f64,
    pub p_b: f64,
}

impl MachineConfig {
    pub fn new(p_a: f64, p_b: f64) -> Result<Self> {
        for (name, p) in [("p_a", p_a), ("p_b", p_b)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(Self { p_a, p_b })
    }

    /// Both machines always pay.
    pub fn certain() -> Self {
        Self { p_a: 1.0, p_b: 1.0 }
    }

    pub fn total(&self) -> f64 {
        self.p_a + self.p_b
    }
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self::certain()
    }
}

/// Realized machine payouts for one turn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payouts {
    pub a: f64,
    pub b: f64,
}

/// Splits each machine's payout evenly among its selectors. Payout of a
/// machine nobody picked is lost.
pub fn split_rewards(selections: &[Machine], payouts: Payouts) -> Result<Vec<f64>> {
    if selections.is_empty() {
        return Err(Error::invalid("at least one player required"));
    }
    let n_a = selections.iter().filter(|&&m| m == Machine::A).count();
    let n_b = selections.len() - n_a;
    Ok(selections
        .iter()
        .map(|m| match m {
            Machine::A => payouts.a / n_a as f64,
            Machine::B => payouts.b / n_b as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub outcome: usize,
    pub selections: Vec<Machine>,
    pub payouts: Payouts,
    pub rewards: Vec<f64>,
}

impl TurnResult {
    /// Payout actually collected by players this turn.
    pub fn captured(&self) -> f64 {
        let a = if self.selections.contains(&Machine::A) { self.payouts.a } else { 0.0 };
        let b = if self.selections.contains(&Machine::B) { self.payouts.b } else { 0.0 };
        a + b
    }
}

/// One turn from a precomputed outcome distribution. Draws, in order: the
/// outcome, machine A's payout, machine B's payout.
pub fn play_turn_with<R: Rng + ?Sized>(
    dist: &OutcomeDistribution<f64>,
    machines: &MachineConfig,
    rng: &mut R,
) -> TurnResult {
    let outcome = sample_outcome(dist, rng);
    let a = if rng.gen::<f64>() < machines.p_a { 1.0 } else { 0.0 };
    let b = if rng.gen::<f64>() < machines.p_b { 1.0 } else { 0.0 };
    let payouts = Payouts { a, b };
    let selections = selections(outcome, dist.n_players());
    let rewards = split_rewards(&selections, payouts).expect("n_players >= 1");
    TurnResult {
        outcome,
        selections,
        payouts,
        rewards,
    }
}

/// Rotate, measure, pay out, split.
pub fn play_turn<R: Rng + ?Sized>(
    state: &StateVector<f64>,
    angles: &AngleConfig<f64>,
    machines: &MachineConfig,
    rng: &mut R,
) -> Result<TurnResult> {
    let dist = rotated_distribution(state, angles)?;
    Ok(play_turn_with(&dist, machines, rng))
}

/// Accumulated player rewards `R_j` and machine payouts `X_A`, `X_B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub rewards: Vec<f64>,
    pub machine_a: f64,
    pub machine_b: f64,
    pub turns: u64,
}

impl RewardLedger {
    pub fn new(n_players: usize) -> Self {
        Self {
            rewards: vec![0.0; n_players],
            machine_a: 0.0,
            machine_b: 0.0,
            turns: 0,
        }
    }

    pub fn record(&mut self, turn: &TurnResult) {
        for (acc, r) in self.rewards.iter_mut().zip(&turn.rewards) {
            *acc += r;
        }
        self.machine_a += turn.payouts.a;
        self.machine_b += turn.payouts.b;
        self.turns += 1;
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn total_payout(&self) -> f64 {
        self.machine_a + self.machine_b
    }

    pub fn jain(&self) -> f64 {
        jain_index(&self.rewards)
    }
}

/// `(Σ R_j)² / (N · Σ R_j²)`; all-zero rewards count as perfectly fair.
pub fn jain_index<T: Real>(rewards: &[T]) -> T {
    assert!(!rewards.is_empty(), "Jain index needs at least one player");
    let sum: T = rewards.iter().copied().sum();
    let sum_sq: T = rewards.iter().map(|&r| r * r).sum();
    if sum_sq == T::zero() {
        return T::one();
    }
    sum * sum / (T::lit(rewards.len() as f64) * sum_sq)
}

/// Jain index times the captured fraction of machine payouts. `None` before
/// any machine has paid.
pub fn pondered_index(ledger: &RewardLedger) -> Option<f64> {
    let payout = ledger.total_payout();
    (payout > 0.0).then(|| ledger.jain() * ledger.total_reward() / payout)
}

/// Per-turn expected reward of each player for a fixed outcome distribution.
pub fn expected_rewards_from<T: Real>(dist: &OutcomeDistribution<T>, machines: &MachineConfig) -> Vec<T> {
    let n = dist.n_players();
    let (p_a, p_b) = (T::lit(machines.p_a), T::lit(machines.p_b));
    let mut expected = vec![T::zero(); n];
    for (o, &p) in dist.probs().iter().enumerate() {
        if p == T::zero() {
            continue;
        }
        let n_b = o.count_ones() as usize;
        let n_a = n - n_b;
        for (j, e) in expected.iter_mut().enumerate() {
            *e = *e + if player_bit(o, n, j) {
                p * p_b / T::lit(n_b as f64)
            } else {
                p * p_a / T::lit(n_a as f64)
            };
        }
    }
    expected
}

pub fn expected_rewards<T: Real>(
    state: &StateVector<T>,
    angles: &AngleConfig<T>,
    machines: &MachineConfig,
) -> Result<Vec<T>> {
    Ok(expected_rewards_from(&rotated_distribution(state, angles)?, machines))
}

/// `P(all H) + P(all V)` after rotation.
pub fn conflict_probability<T: Real>(state: &StateVector<T>, angles: &AngleConfig<T>) -> Result<T> {
    Ok(rotated_distribution(state, angles)?.conflict())
}

/// Noise-free metrics for one angle configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactMetrics<T: Real> {
    pub expected_rewards: Vec<T>,
    pub total: T,
    pub jain: T,
    pub conflict: T,
    /// Expectation analog of the pondered index: Jain × total / (p_a + p_b).
    pub pondered: Option<T>,
}

pub fn exact_metrics_from<T: Real>(dist: &OutcomeDistribution<T>, machines: &MachineConfig) -> ExactMetrics<T> {
    let expected = expected_rewards_from(dist, machines);
    let total: T = expected.iter().copied().sum();
    let jain = jain_index(&expected);
    let pondered = (machines.total() > 0.0).then(|| jain * total / T::lit(machines.total()));
    ExactMetrics {
        expected_rewards: expected,
        total,
        jain,
        conflict: dist.conflict(),
        pondered,
    }
}

pub fn exact_metrics<T: Real>(
    state: &StateVector<T>,
    angles: &AngleConfig<T>,
    machines: &MachineConfig,
) -> Result<ExactMetrics<T>> {
    Ok(exact_metrics_from(&rotated_distribution(state, angles)?, machines))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::RngSeed;
    use crate::states::{a4, psi3, singlet, Sign};
    use std::f64::consts::PI;

    use Machine::{A, B};

    fn deg(angles: &[f64]) -> AngleConfig<f64> {
        AngleConfig::from_degrees(angles).unwrap()
    }

    #[test]
    fn split_examples() {
        let r = split_rewards(&[A, A, B], Payouts { a: 1.0, b: 0.0 }).unwrap();
        assert_eq!(r, vec![0.5, 0.5, 0.0]);
        let r = split_rewards(&[A, B], Payouts { a: 1.0, b: 1.0 }).unwrap();
        assert_eq!(r, vec![1.0, 1.0]);
        let r = split_rewards(&[A, A, A, A], Payouts { a: 1.0, b: 1.0 }).unwrap();
        assert_eq!(r, vec![0.25; 4]);
        assert!(split_rewards(&[], Payouts { a: 1.0, b: 1.0 }).is_err());
    }

    #[test]
    fn machine_probabilities_are_validated() {
        assert!(MachineConfig::new(1.2, 0.5).is_err());
        assert!(MachineConfig::new(0.3, -0.1).is_err());
        assert!(MachineConfig::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn jain_examples() {
        assert!((jain_index(&[1.0, 1.0, 1.0]) - 1.0f64).abs() < 1e-15);
        assert!((jain_index(&[1.0, 0.0, 0.0, 0.0]) - 0.25f64).abs() < 1e-15);
        assert!((jain_index(&[2.0, 2.0, 0.0, 0.0]) - 0.5f64).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0f64, 0.0]), 1.0);
    }

    #[test]
    fn pondered_examples() {
        let ledger = |r: Vec<f64>, x: f64| RewardLedger {
            rewards: r,
            machine_a: x / 2.0,
            machine_b: x / 2.0,
            turns: 1,
        };
        assert!((pondered_index(&ledger(vec![1.0, 1.0], 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pondered_index(&ledger(vec![2.0, 0.0], 2.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((pondered_index(&ledger(vec![0.5, 0.5], 2.0)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pondered_index(&RewardLedger::new(3)), None);
    }

    #[test]
    fn aligned_singlet_never_conflicts() {
        let s = singlet();
        let mut rng = RngSeed(3).rng();
        for _ in 0..2000 {
            let t = play_turn(&s, &deg(&[20.0, 20.0]), &MachineConfig::certain(), &mut rng).unwrap();
            assert_eq!(t.rewards, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn dead_machines_pay_nothing() {
        let s = psi3(Sign::Plus, Sign::Plus);
        let m = MachineConfig::new(0.0, 0.0).unwrap();
        let mut rng = RngSeed(3).rng();
        for _ in 0..200 {
            let t = play_turn(&s, &deg(&[10.0, 50.0, 90.0]), &m, &mut rng).unwrap();
            assert_eq!(t.rewards, vec![0.0; 3]);
        }
        assert_eq!(expected_rewards(&s, &deg(&[10.0, 50.0, 90.0]), &m).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn turns_are_reproducible() {
        let s = a4(0.4, Sign::Plus);
        let m = MachineConfig::new(0.7, 0.4).unwrap();
        let run = || {
            let mut rng = RngSeed(99).rng();
            (0..100)
                .map(|_| play_turn(&s, &deg(&[0.0, 15.0, 40.0, 0.0]), &m, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    /// Brute-force enumeration over outcomes and payout events.
    fn enumerate_expected(dist: &OutcomeDistribution<f64>, m: &MachineConfig) -> Vec<f64> {
        let n = dist.n_players();
        let mut e = vec![0.0; n];
        for o in 0..dist.probs().len() {
            for (xa, pa) in [(1.0, m.p_a), (0.0, 1.0 - m.p_a)] {
                for (xb, pb) in [(1.0, m.p_b), (0.0, 1.0 - m.p_b)] {
                    let r = split_rewards(&selections(o, n), Payouts { a: xa, b: xb }).unwrap();
                    for j in 0..n {
                        e[j] += dist.prob(o) * pa * pb * r[j];
                    }
                }
            }
        }
        e
    }

    #[test]
    fn expected_rewards_examples() {
        let m = MachineConfig::new(0.8, 0.6).unwrap();
        let e = expected_rewards(&singlet(), &deg(&[0.0, 0.0]), &m).unwrap();
        assert!((e[0] - 0.7).abs() < 1e-15 && (e[1] - 0.7).abs() < 1e-15);
        let e = expected_rewards(&psi3::<f64>(Sign::Plus, Sign::Plus), &AngleConfig::zeros(3), &MachineConfig::certain()).unwrap();
        for x in e {
            assert!((x - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn expected_rewards_match_enumeration() {
        let m = MachineConfig::new(0.35, 0.9).unwrap();
        let s = psi3(Sign::Minus, Sign::Plus);
        for cfg in [[0.0, 0.0, 0.0], [10.0, 75.0, 130.0], [45.0, 0.0, 90.0]] {
            let dist = rotated_distribution(&s, &deg(&cfg)).unwrap();
            let fast = expected_rewards_from(&dist, &m);
            let slow = enumerate_expected(&dist, &m);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-15);
            }
            let total: f64 = fast.iter().sum();
            let oracle = m.p_a * (1.0 - dist.prob(7)) + m.p_b * (1.0 - dist.prob(0));
            assert!((total - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn singlet_conflict_follows_relative_angle() {
        for d in (0..180).step_by(15) {
            let c = conflict_probability(&singlet(), &deg(&[0.0, d as f64])).unwrap();
            let oracle = (d as f64 * PI / 180.0).sin().powi(2);
            assert!((c - oracle).abs() < 1e-12);
        }
        let c = conflict_probability(&singlet(), &deg(&[0.0, 90.0])).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_states_have_no_conflict() {
        assert!(conflict_probability(&psi3::<f64>(Sign::Plus, Sign::Plus), &AngleConfig::zeros(3)).unwrap() < 1e-15);
        for phi in [0.0, 1.0, PI] {
            for theta in [0.0, 0.4, 2.0] {
                let c = conflict_probability(&a4(phi, Sign::Plus), &AngleConfig::uniform(4, theta)).unwrap();
                assert!(c < 1e-15);
            }
        }
    }

    #[test]
    fn ledger_accumulates() {
        let s = psi3(Sign::Plus, Sign::Plus);
        let m = MachineConfig::new(0.5, 0.5).unwrap();
        let mut rng = RngSeed(1).rng();
        let mut ledger = RewardLedger::new(3);
        for _ in 0..500 {
            let t = play_turn(&s, &deg(&[0.0, 30.0, 100.0]), &m, &mut rng).unwrap();
            let before = ledger.clone();
            ledger.record(&t);
            assert!(ledger.rewards.iter().zip(&before.rewards).all(|(a, b)| a >= b));
            assert!(ledger.total_reward() <= ledger.total_payout() + 1e-12);
            assert!((t.rewards.iter().sum::<f64>() - t.captured()).abs() < 1e-12);
        }
        assert_eq!(ledger.turns, 500);
    }

    #[test]
    fn monte_carlo_rewards_match_expectation() {
        let s = a4(0.9, Sign::Plus);
        let m = MachineConfig::new(0.7, 0.45).unwrap();
        let angles = deg(&[0.0, 20.0, 65.0, 110.0]);
        let dist = rotated_distribution(&s, &angles).unwrap();
        let exact = expected_rewards_from(&dist, &m);
        let n = 100_000;
        let mut rng = RngSeed(21).rng();
        let mut sums = vec![0.0; 4];
        let mut squares = vec![0.0; 4];
        for _ in 0..n {
            let t = play_turn_with(&dist, &m, &mut rng);
            assert!((t.rewards.iter().sum::<f64>() - t.captured()).abs() < 1e-12);
            for j in 0..4 {
                sums[j] += t.rewards[j];
                squares[j] += t.rewards[j] * t.rewards[j];
            }
        }
        for j in 0..4 {
            let mean = sums[j] / n as f64;
            let var = squares[j] / n as f64 - mean * mean;
            let sigma = (var / n as f64).sqrt();
            assert!((mean - exact[j]).abs() <= 4.0 * sigma, "player {j}: {mean} vs {}", exact[j]);
        }
    }

    #[test]
    fn singlet_grid_is_fair_and_relative() {
        let m = MachineConfig::certain();
        for a in (0..360).step_by(5) {
            for b in (0..360).step_by(5) {
                let e = expected_rewards(&singlet(), &deg(&[a as f64, b as f64]), &m).unwrap();
                assert!((e[0] - e[1]).abs() < 1e-12);
                let shifted = expected_rewards(&singlet(), &deg(&[0.0, (b - a) as f64]), &m).unwrap();
                assert!((e[0] + e[1] - shifted[0] - shifted[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn a4_is_fair_on_coarse_grid() {
        let m = MachineConfig::certain();
        for phi in [0.0, PI / 2.0, PI] {
            let s = a4(phi, Sign::Plus);
            for a in (0..180).step_by(15) {
                for b in (0..180).step_by(15) {
                    for c in (0..180).step_by(15) {
                        let e = expected_rewards(&s, &deg(&[a as f64, b as f64, c as f64, 0.0]), &m).unwrap();
                        assert!(jain_index(&e) >= 0.995);
                    }
                }
            }
        }
    }

    #[test]
    fn psi3_has_unfair_witness() {
        let s = psi3::<f64>(Sign::Plus, Sign::Plus);
        let m = MachineConfig::certain();
        let witness = (0..180).step_by(5).find_map(|b| {
            (0..180).step_by(5).find_map(|c| {
                let e = expected_rewards(&s, &deg(&[0.0, b as f64, c as f64]), &m).unwrap();
                (jain_index(&e) < 0.99).then_some((b, c))
            })
        });
        assert!(witness.is_some());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn machine() -> impl Strategy<Value = Machine> {
            prop_oneof![Just(A), Just(B)]
        }

        proptest! {
            #[test]
            fn split_conserves_captured_payout(
                sel in proptest::collection::vec(machine(), 1..8),
                a in 0u8..2, b in 0u8..2,
            ) {
                let p = Payouts { a: a as f64, b: b as f64 };
                let r = split_rewards(&sel, p).unwrap();
                let captured = if sel.contains(&A) { p.a } else { 0.0 } + if sel.contains(&B) { p.b } else { 0.0 };
                prop_assert!((r.iter().sum::<f64>() - captured).abs() < 1e-12);
                prop_assert!(r.iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn jain_is_bounded(r in proptest::collection::vec(0.0f64..10.0, 1..8)) {
                let j = jain_index(&r);
                prop_assert!(j >= 1.0 / r.len() as f64 - 1e-12 && j <= 1.0 + 1e-12);
            }

            #[test]
            fn expected_total_bounded(
                t in proptest::collection::vec(0.0f64..180.0, 3),
                pa in 0.0f64..1.0, pb in 0.0f64..1.0,
            ) {
                let m = MachineConfig::new(pa, pb).unwrap();
                let x = exact_metrics(&psi3(Sign::Plus, Sign::Minus), &deg(&t), &m).unwrap();
                prop_assert!(x.total.to_f64_lossy() <= pa + pb + 1e-12);
                prop_assert!(x.conflict >= 0.0 && x.conflict <= 1.0 + 1e-12);
            }
        }
    }
}
