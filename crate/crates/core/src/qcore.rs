//! Dense complex state vectors over the N-photon polarization basis.
//!
//! Basis ordering: player `j` (1-based) owns bit `n_players - j` counted from
//! the least significant end, with `H = 0` and `V = 1`. Player 1 is therefore
//! the most significant bit and a ket label such as `"HHV"` reads left to right
//! as players 1..N (`"HHV"` is index 1, `"VHH"` is index 4).

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense storage limit: 2^16 amplitudes.
pub const MAX_PLAYERS: usize = 16;

fn check_players(n_players: usize) -> Result<()> {
    if n_players == 0 || n_players > MAX_PLAYERS {
        return Err(Error::InvalidPlayerCount(n_players));
    }
    Ok(())
}

/// Bit mask selecting player `player` (0-based) inside a basis index.
#[inline]
pub fn player_mask(n_players: usize, player: usize) -> usize {
    1 << (n_players - 1 - player)
}

/// Whether player `player` (0-based) measured `V` in outcome `index`.
#[inline]
pub fn player_bit(index: usize, n_players: usize, player: usize) -> bool {
    index & player_mask(n_players, player) != 0
}

/// Parses a ket label like `"HVVH"` into its basis index.
pub fn basis_index(ket: &str) -> Result<usize> {
    let ket = ket.trim();
    if ket.is_empty() || ket.len() > MAX_PLAYERS {
        return Err(Error::InvalidKet(ket.to_string()));
    }
    ket.chars().try_fold(0usize, |acc, c| match c {
        'H' | 'h' => Ok(acc << 1),
        'V' | 'v' => Ok((acc << 1) | 1),
        _ => Err(Error::InvalidKet(ket.to_string())),
    })
}

/// Inverse of [`basis_index`].
pub fn ket_label(index: usize, n_players: usize) -> String {
    (0..n_players)
        .map(|j| if player_bit(index, n_players, j) { 'V' } else { 'H' })
        .collect()
}

/// Index of the outcome with every player's H/V choice swapped.
#[inline]
pub fn mirror_index(index: usize, n_players: usize) -> usize {
    index ^ ((1 << n_players) - 1)
}

/// Pure N-photon polarization state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T: Real> {
    n_players: usize,
    amplitudes: Vec<Complex<T>>,
}

impl<T: Real> StateVector<T> {
    /// Builds a state and checks that it is normalized within
    /// [`Real::NORM_TOLERANCE`].
    pub fn new(n_players: usize, amplitudes: Vec<Complex<T>>) -> Result<Self> {
        let state = Self::new_unnormalized(n_players, amplitudes)?;
        let norm = state.norm().to_f64_lossy();
        if !((norm - 1.0).abs() <= T::NORM_TOLERANCE) {
            return Err(Error::Unnormalized { norm });
        }
        Ok(state)
    }

    /// Builds a state without a norm check; only the length is validated.
    pub fn new_unnormalized(n_players: usize, amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_players(n_players)?;
        let expected = 1usize << n_players;
        if amplitudes.len() != expected {
            return Err(Error::AmplitudeCount {
                n_players,
                expected,
                found: amplitudes.len(),
            });
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::invalid("amplitudes must be finite"));
        }
        Ok(Self {
            n_players,
            amplitudes,
        })
    }

    /// Sums `(ket, coefficient)` terms and normalizes the result.
    pub fn from_terms(n_players: usize, terms: &[(&str, Complex<T>)]) -> Result<Self> {
        check_players(n_players)?;
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); 1 << n_players];
        for (ket, coefficient) in terms {
            if ket.trim().len() != n_players {
                return Err(Error::InvalidKet(ket.to_string()));
            }
            amplitudes[basis_index(ket)?] = amplitudes[basis_index(ket)?] + coefficient;
        }
        Self::new_unnormalized(n_players, amplitudes)?.normalized()
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_players: usize, index: usize) -> Result<Self> {
        check_players(n_players)?;
        let dim = 1usize << n_players;
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index,
            });
        }
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); dim];
        amplitudes[index] = Complex::new(T::one(), T::zero());
        Ok(Self {
            n_players,
            amplitudes,
        })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> Complex<T> {
        self.amplitudes[index]
    }

    /// Amplitude of a ket label; panics on a malformed label.
    pub fn amplitude_of(&self, ket: &str) -> Complex<T> {
        self.amplitudes[basis_index(ket).expect("valid ket label")]
    }

    pub fn into_amplitudes(self) -> Vec<Complex<T>> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> T {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm().to_f64_lossy() - 1.0).abs() <= T::NORM_TOLERANCE
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm();
        if norm == T::zero() {
            return Err(Error::ZeroNorm);
        }
        for a in &mut self.amplitudes {
            *a = *a / norm;
        }
        Ok(self)
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn with_global_phase(mut self, phi: T) -> Self {
        let phase = Complex::from_polar(T::one(), phi);
        for a in &mut self.amplitudes {
            *a = *a * phase;
        }
        self
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            }))
    }

    /// Converts between scalar types.
    pub fn cast<U: Real>(&self) -> StateVector<U> {
        StateVector {
            n_players: self.n_players,
            amplitudes: self
                .amplitudes
                .iter()
                .map(|a| Complex::new(U::lit(a.re.to_f64_lossy()), U::lit(a.im.to_f64_lossy())))
                .collect(),
        }
    }
}

/// Polarization rotation `r(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]` acting on
/// the coefficient pair `(a, b)` of `a|H⟩ + b|V⟩`.
pub fn single_rotation<T: Real>(theta: T) -> [[T; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, s], [-s, c]]
}

/// One rotation angle per player, in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleConfig<T: Real> {
    angles: Vec<T>,
}

impl<T: Real> AngleConfig<T> {
    pub fn from_radians(angles: Vec<T>) -> Result<Self> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("rotation angles must be finite"));
        }
        Ok(Self { angles })
    }

    pub fn from_degrees(degrees: &[T]) -> Result<Self> {
        Self::from_radians(degrees.iter().map(|&d| T::deg_to_rad(d)).collect())
    }

    /// Every player at the same angle.
    pub fn uniform(n_players: usize, theta: T) -> Self {
        Self {
            angles: vec![theta; n_players],
        }
    }

    pub fn zeros(n_players: usize) -> Self {
        Self::uniform(n_players, T::zero())
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn radians(&self) -> &[T] {
        &self.angles
    }

    pub fn degrees(&self) -> Vec<T> {
        self.angles
            .iter()
            .map(|&a| a * T::lit(180.0) / T::PI())
            .collect()
    }
}

/// Applies `⊗_j r(θ_j)` to the state.
pub fn apply_rotations<T: Real>(
    state: &StateVector<T>,
    config: &AngleConfig<T>,
) -> Result<StateVector<T>> {
    if config.len() != state.n_players() {
        return Err(Error::DimensionMismatch {
            expected: state.n_players(),
            found: config.len(),
        });
    }
    let mut out = state.clone();
    for (player, &theta) in config.radians().iter().enumerate() {
        if theta == T::zero() {
            continue;
        }
        rotate_player_in_place(&mut out.amplitudes, state.n_players(), player, theta);
    }
    Ok(out)
}

/// Applies the same rotation to every player.
pub fn rotate_global<T: Real>(state: &StateVector<T>, theta: T) -> StateVector<T> {
    apply_rotations(state, &AngleConfig::uniform(state.n_players(), theta))
        .expect("uniform config matches player count")
}

pub(crate) fn rotate_player_in_place<T: Real>(
    amplitudes: &mut [Complex<T>],
    n_players: usize,
    player: usize,
    theta: T,
) {
    let [[c, s], [ms, _]] = single_rotation(theta);
    let mask = player_mask(n_players, player);
    for i in 0..amplitudes.len() {
        if i & mask != 0 {
            continue;
        }
        let a = amplitudes[i];
        let b = amplitudes[i | mask];
        amplitudes[i] = a * c + b * s;
        amplitudes[i | mask] = a * ms + b * c;
    }
}

/// Probabilities of the `2^N` joint H/V outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDistribution<T: Real> {
    n_players: usize,
    probs: Vec<T>,
}

impl<T: Real> OutcomeDistribution<T> {
    /// Validates and clamps a probability vector. Entries above the rounding
    /// floor but below zero are set to zero, then the vector is rescaled to sum 1.
    pub fn new(n_players: usize, mut probs: Vec<T>) -> Result<Self> {
        check_players(n_players)?;
        if probs.len() != 1 << n_players {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_players,
                found: probs.len(),
            });
        }
        for (index, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::invalid("probabilities must be finite"));
            }
            if *p < T::zero() {
                if p.to_f64_lossy() < T::NEGATIVE_PROBABILITY_FLOOR {
                    return Err(Error::NegativeProbability {
                        index,
                        value: p.to_f64_lossy(),
                    });
                }
                *p = T::zero();
            }
        }
        let total: T = probs.iter().copied().sum();
        if !((total.to_f64_lossy() - 1.0).abs() <= T::NORM_TOLERANCE) {
            return Err(Error::Unnormalized {
                norm: total.to_f64_lossy().sqrt(),
            });
        }
        for p in &mut probs {
            *p = *p / total;
        }
        Ok(Self { n_players, probs })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> T {
        self.probs[index]
    }

    pub fn prob_of(&self, ket: &str) -> T {
        self.probs[basis_index(ket).expect("valid ket label")]
    }

    /// Probability that every player selected the same machine.
    pub fn conflict(&self) -> T {
        self.probs[0] + self.probs[self.probs.len() - 1]
    }
}

/// `p(o) = |a_o|²` in the canonical product basis.
pub fn outcome_distribution<T: Real>(state: &StateVector<T>) -> Result<OutcomeDistribution<T>> {
    let norm = state.norm().to_f64_lossy();
    if !((norm - 1.0).abs() <= T::NORM_TOLERANCE) {
        return Err(Error::Unnormalized { norm });
    }
    let probs = state.amplitudes().iter().map(|a| a.norm_sqr()).collect();
    OutcomeDistribution::new(state.n_players(), probs)
}

/// Outcome distribution after the players rotate their bases.
pub fn rotated_distribution<T: Real>(
    state: &StateVector<T>,
    config: &AngleConfig<T>,
) -> Result<OutcomeDistribution<T>> {
    outcome_distribution(&apply_rotations(state, config)?)
}

/// Draws one outcome index. Consumes exactly one `f64` from `rng`.
pub fn sample_outcome<T: Real, R: Rng + ?Sized>(dist: &OutcomeDistribution<T>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, p) in dist.probs().iter().enumerate() {
        let p = p.to_f64_lossy();
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    last_nonzero
}

/// Seed for a deterministic random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for sub-task `index` (SplitMix64 mixing).
    pub fn substream(self, index: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}
