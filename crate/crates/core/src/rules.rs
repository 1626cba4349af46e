//! Certification of N-photon states against the three design rules:
//! global rotation invariance, symmetry between players (permutations and H/V
//! mirror), and no term where every player makes the same choice.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::qcore::{mirror_index, rotate_global, StateVector};
use crate::scalar::Real;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Outcomes with probability below this count as absent when matching an ansatz.
const SUPPORT_FLOOR: f64 = 1e-12;

/// `[0°, step, 2·step, …)` below 180°, in radians.
pub fn theta_grid<T: Real>(step_degrees: f64) -> Vec<T> {
    assert!(step_degrees > 0.0, "grid step must be positive");
    let count = (180.0 / step_degrees).ceil() as usize;
    (0..count)
        .map(|k| T::lit((k as f64 * step_degrees).to_radians()))
        .filter(|t| t.to_f64_lossy() < std::f64::consts::PI - 1e-12)
        .collect()
}

/// 36 angles, 0° to 175° in 5° steps.
pub fn default_theta_grid<T: Real>() -> Vec<T> {
    theta_grid(5.0)
}

/// `|a_o|² / ‖ψ‖²` without a normalization check.
pub(crate) fn probabilities<T: Real>(state: &StateVector<T>) -> Vec<T> {
    let norm_sqr = state.norm_sqr();
    state
        .amplitudes()
        .iter()
        .map(|a| a.norm_sqr() / norm_sqr)
        .collect()
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max)
}

/// `|a_{H…H}|² + |a_{V…V}|²`.
pub fn check_no_conflict_terms<T: Real>(state: &StateVector<T>) -> T {
    let p = probabilities(state);
    p[0] + p[p.len() - 1]
}

/// Largest change of any canonical-basis outcome probability when every
/// player rotates by the same angle from `grid`.
pub fn check_rotation_invariance<T: Real>(state: &StateVector<T>, grid: &[T]) -> T {
    let p0 = probabilities(state);
    grid.iter()
        .map(|&theta| max_abs_diff(&probabilities(&rotate_global(state, theta)), &p0))
        .fold(T::zero(), T::max)
}

/// `max_θ (1 − |⟨ψ|R̂(θ)|ψ⟩|)`. Zero means the state is an eigenvector of every
/// global rotation, so its density matrix is rotation invariant in every basis.
pub fn check_eigenphase<T: Real>(state: &StateVector<T>, grid: &[T]) -> T {
    let norm_sqr = state.norm_sqr();
    grid.iter()
        .map(|&theta| {
            let overlap = state
                .inner(&rotate_global(state, theta))
                .expect("same dimension");
            (T::one() - overlap.norm() / norm_sqr).max(T::zero())
        })
        .fold(T::zero(), T::max)
}

/// `(max_{π,o} |p(o) − p(π·o)|, max_o |p(o) − p(mirror o)|)` on the unrotated
/// distribution.
///
/// Player permutations reach exactly the outcomes of equal Hamming weight, so
/// the permutation residual is the widest probability spread inside a weight
/// class; no permutation is enumerated.
pub fn check_permutation_mirror<T: Real>(state: &StateVector<T>) -> (T, T) {
    let n = state.n_players();
    let p = probabilities(state);
    let mut lo = vec![T::infinity(); n + 1];
    let mut hi = vec![T::neg_infinity(); n + 1];
    for (o, &po) in p.iter().enumerate() {
        let w = o.count_ones() as usize;
        lo[w] = lo[w].min(po);
        hi[w] = hi[w].max(po);
    }
    let perm = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| h - l)
        .fold(T::zero(), T::max);
    let mirror = p
        .iter()
        .enumerate()
        .map(|(o, &po)| (po - p[mirror_index(o, n)]).abs())
        .fold(T::zero(), T::max);
    (perm, mirror)
}

/// Residuals of the closed-form coefficient conditions, for the ansatz the
/// state's zero pattern matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ansatz", rename_all = "snake_case")]
pub enum CoefficientConditions {
    /// Six mixed terms for three players: `a₁+a₂+a₃ = 0`, `a_k = ±i·b_k`, all moduli `1/√6`.
    ThreePlayer {
        sum_rule: f64,
        mirror_phase: f64,
        modulus: f64,
    },
    /// 2-2 split terms for four players: `c₁+c₂+c₃ = 0`, mirrors equal, moduli `1/√6`.
    FourSymmetric {
        sum_rule: f64,
        mirror_equal: f64,
        modulus: f64,
    },
    /// 3-1 split terms for four players: `Σ a_k = 0`, mirrors opposite, moduli `1/√8`.
    FourAsymmetric {
        sum_rule: f64,
        mirror_opposite: f64,
        modulus: f64,
    },
    NotApplicable,
}

impl CoefficientConditions {
    pub fn max_residual(&self) -> Option<f64> {
        match *self {
            CoefficientConditions::ThreePlayer {
                sum_rule,
                mirror_phase,
                modulus,
            } => Some(sum_rule.max(mirror_phase).max(modulus)),
            CoefficientConditions::FourSymmetric {
                sum_rule,
                mirror_equal,
                modulus,
            } => Some(sum_rule.max(mirror_equal).max(modulus)),
            CoefficientConditions::FourAsymmetric {
                sum_rule,
                mirror_opposite,
                modulus,
            } => Some(sum_rule.max(mirror_opposite).max(modulus)),
            CoefficientConditions::NotApplicable => None,
        }
    }
}

fn supported_only_on<T: Real>(state: &StateVector<T>, allowed: impl Fn(usize) -> bool) -> bool {
    state
        .amplitudes()
        .iter()
        .enumerate()
        .all(|(o, a)| allowed(o) || a.norm_sqr().to_f64_lossy() < SUPPORT_FLOOR)
}

fn c64<T: Real>(a: Complex<T>) -> Complex<f64> {
    Complex::new(a.re.to_f64_lossy(), a.im.to_f64_lossy())
}

fn modulus_residual(amps: &[Complex<f64>], target: f64) -> f64 {
    amps.iter()
        .map(|a| (a.norm() - target).abs())
        .fold(0.0, f64::max)
}

/// Literal check of the coefficient equations on the stored amplitudes.
pub fn check_coefficient_conditions<T: Real>(state: &StateVector<T>) -> CoefficientConditions {
    let n = state.n_players();
    let amp = |ket: &str| c64(state.amplitude_of(ket));
    let full = (1usize << n) - 1;
    match n {
        3 if supported_only_on(state, |o| o != 0 && o != full) => {
            let a = [amp("HHV"), amp("HVH"), amp("VHH")];
            let b = [amp("VVH"), amp("VHV"), amp("HVV")];
            let sum_rule = (a[0] + a[1] + a[2]).norm();
            let mirror_phase = [1.0, -1.0]
                .iter()
                .map(|&s| {
                    let i = Complex::new(0.0, s);
                    a.iter()
                        .zip(&b)
                        .map(|(ak, bk)| (ak - i * bk).norm())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            let all: Vec<_> = a.iter().chain(&b).copied().collect();
            CoefficientConditions::ThreePlayer {
                sum_rule,
                mirror_phase,
                modulus: modulus_residual(&all, 1.0 / 6f64.sqrt()),
            }
        }
        4 if supported_only_on(state, |o| o.count_ones() == 2) => {
            let c = [
                amp("HHVV"),
                amp("HVHV"),
                amp("HVVH"),
                amp("VHHV"),
                amp("VHVH"),
                amp("VVHH"),
            ];
            let mirror_equal = [(0, 5), (1, 4), (2, 3)]
                .iter()
                .map(|&(i, j)| (c[i] - c[j]).norm())
                .fold(0.0, f64::max);
            CoefficientConditions::FourSymmetric {
                sum_rule: (c[0] + c[1] + c[2]).norm(),
                mirror_equal,
                modulus: modulus_residual(&c, 1.0 / 6f64.sqrt()),
            }
        }
        4 if supported_only_on(state, |o| o.count_ones() % 2 == 1) => {
            let a = [amp("HHHV"), amp("HHVH"), amp("HVHH"), amp("VHHH")];
            let b = [amp("VVVH"), amp("VVHV"), amp("VHVV"), amp("HVVV")];
            let mirror_opposite = a
                .iter()
                .zip(&b)
                .map(|(ak, bk)| (ak + bk).norm())
                .fold(0.0, f64::max);
            let all: Vec<_> = a.iter().chain(&b).copied().collect();
            CoefficientConditions::FourAsymmetric {
                sum_rule: (a[0] + a[1] + a[2] + a[3]).norm(),
                mirror_opposite,
                modulus: modulus_residual(&all, 1.0 / 8f64.sqrt()),
            }
        }
        _ => CoefficientConditions::NotApplicable,
    }
}

/// Design rules a state can violate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Probabilities (canonical basis) and density matrix unchanged by common rotations.
    RotationInvariance,
    /// Equal probabilities across player permutations and H/V mirrors.
    Symmetry,
    /// No amplitude where all players choose the same machine.
    NoConflictTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub n_players: usize,
    pub tolerance: f64,
    pub residual_no_conflict_terms: f64,
    pub residual_rotation_invariance: f64,
    pub residual_eigenphase: f64,
    pub residual_permutation: f64,
    pub residual_mirror: f64,
    pub pass_no_conflict_terms: bool,
    pub pass_rotation_invariance: bool,
    pub pass_eigenphase: bool,
    pub pass_permutation: bool,
    pub pass_mirror: bool,
    pub coefficient_conditions: CoefficientConditions,
    pub failing_rules: Vec<Rule>,
    pub pass: bool,
}

impl CertificationReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.residual_no_conflict_terms,
            self.residual_rotation_invariance,
            self.residual_eigenphase,
            self.residual_permutation,
            self.residual_mirror,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Runs every check on the default 5° grid.
pub fn certify<T: Real>(state: &StateVector<T>, tolerance: f64) -> CertificationReport {
    certify_on_grid(state, tolerance, &default_theta_grid::<T>())
}

pub fn certify_on_grid<T: Real>(
    state: &StateVector<T>,
    tolerance: f64,
    grid: &[T],
) -> CertificationReport {
    let no_conflict = check_no_conflict_terms(state).to_f64_lossy();
    let rotation = check_rotation_invariance(state, grid).to_f64_lossy();
    let eigenphase = check_eigenphase(state, grid).to_f64_lossy();
    let (perm, mirror) = check_permutation_mirror(state);
    let (perm, mirror) = (perm.to_f64_lossy(), mirror.to_f64_lossy());
    let ok = |r: f64| r < tolerance;

    let mut failing_rules = Vec::new();
    if !(ok(rotation) && ok(eigenphase)) {
        failing_rules.push(Rule::RotationInvariance);
    }
    if !(ok(perm) && ok(mirror)) {
        failing_rules.push(Rule::Symmetry);
    }
    if !ok(no_conflict) {
        failing_rules.push(Rule::NoConflictTerms);
    }
    CertificationReport {
        n_players: state.n_players(),
        tolerance,
        residual_no_conflict_terms: no_conflict,
        residual_rotation_invariance: rotation,
        residual_eigenphase: eigenphase,
        residual_permutation: perm,
        residual_mirror: mirror,
        pass_no_conflict_terms: ok(no_conflict),
        pass_rotation_invariance: ok(rotation),
        pass_eigenphase: ok(eigenphase),
        pass_permutation: ok(perm),
        pass_mirror: ok(mirror),
        coefficient_conditions: check_coefficient_conditions(state),
        pass: failing_rules.is_empty(),
        failing_rules,
    }
}
