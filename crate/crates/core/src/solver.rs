//! Numerical search for rule-satisfying states, and fingerprint-based state
//! equivalence.
//!
//! The search minimizes a sum of squared penalty residuals with a multi-start
//! Levenberg–Marquardt iteration. Amplitudes are passed as `2·2^N` reals laid
//! out `[re_0, im_0, re_1, im_1, …]` and projected to the unit sphere before
//! every evaluation.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{mirror_index, player_mask, rotated_distribution, AngleConfig, RngSeed, StateVector};

/// Largest player count the dense Jacobian is built for.
pub const MAX_SOLVER_PLAYERS: usize = 7;

/// Relative grid points kept before the fingerprint is subsampled.
pub const FINGERPRINT_MAX_POINTS: usize = 4096;
const FINGERPRINT_SEED: RngSeed = RngSeed(0x5EED_F1D6);

/// Objective value below which LM stops polishing.
const OBJECTIVE_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_players: usize,
    /// Rotation angles `kπ/theta_samples`, `k = 0..theta_samples`.
    pub theta_samples: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub w_inv: f64,
    pub w_perm: f64,
    pub w_mirror: f64,
    pub w_conflict: f64,
    /// Penalty on the spread of the rotation generator; 0 turns it off.
    pub w_helicity: f64,
    /// A restart counts as converged once its objective is at or below this.
    pub tolerance: f64,
}

impl SearchConfig {
    pub fn new(n_players: usize) -> Self {
        Self {
            n_players,
            theta_samples: 12,
            restarts: 64,
            max_iterations: 400,
            w_inv: 1.0,
            w_perm: 1.0,
            w_mirror: 1.0,
            w_conflict: 1.0,
            w_helicity: 1.0,
            tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SOLVER_PLAYERS).contains(&self.n_players) {
            return Err(Error::invalid(format!(
                "solver supports 2..={MAX_SOLVER_PLAYERS} players, got {}",
                self.n_players
            )));
        }
        if self.theta_samples < 1 || self.restarts < 1 || self.max_iterations < 1 {
            return Err(Error::invalid("theta_samples, restarts and max_iterations must be >= 1"));
        }
        for (name, w) in [
            ("w_inv", self.w_inv),
            ("w_perm", self.w_perm),
            ("w_mirror", self.w_mirror),
            ("w_conflict", self.w_conflict),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {w}")));
            }
        }
        if !(self.w_helicity >= 0.0 && self.w_helicity.is_finite()) {
            return Err(Error::invalid("w_helicity must be non-negative"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Dense real matrix of `⊗_j r(θ)`.
fn global_rotation_matrix(n: usize, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let r = [[c, s], [-s, c]];
    let dim = 1usize << n;
    DMatrix::from_fn(dim, dim, |o, k| {
        (0..n)
            .map(|j| {
                let m = player_mask(n, j);
                r[usize::from(o & m != 0)][usize::from(k & m != 0)]
            })
            .product()
    })
}

/// `K = Σ_j B^(j)` with `B = [[0,1],[-1,0]]`; the generator is `J = -iK`.
fn generator_matrix(n: usize) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut k = DMatrix::zeros(dim, dim);
    for o in 0..dim {
        for j in 0..n {
            let m = player_mask(n, j);
            if o & m == 0 {
                k[(o, o | m)] += 1.0;
            } else {
                k[(o, o & !m)] -= 1.0;
            }
        }
    }
    k
}

/// Penalty objective for one player count.
#[derive(Clone, Debug)]
pub struct Objective {
    n_players: usize,
    dim: usize,
    config: SearchConfig,
    rotations: Vec<DMatrix<f64>>,
    /// Ordered pairs `(o, o')` of equal Hamming weight with `√(k!(N−k)!)`.
    perm_pairs: Vec<(usize, usize, f64)>,
    generator: DMatrix<f64>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl Objective {
    pub fn new(config: &SearchConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_players;
        let dim = 1usize << n;
        let rotations = (1..config.theta_samples)
            .map(|k| global_rotation_matrix(n, k as f64 * std::f64::consts::PI / config.theta_samples as f64))
            .collect();
        let mut perm_pairs = Vec::new();
        for o in 0..dim {
            for p in 0..dim {
                if o != p && o.count_ones() == p.count_ones() {
                    let w = o.count_ones() as usize;
                    perm_pairs.push((o, p, (factorial(w) * factorial(n - w)).sqrt()));
                }
            }
        }
        Ok(Self {
            n_players: n,
            dim,
            config: config.clone(),
            rotations,
            perm_pairs,
            generator: generator_matrix(n),
        })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn n_params(&self) -> usize {
        2 * self.dim
    }

    pub fn n_residuals(&self) -> usize {
        let helicity = if self.config.w_helicity > 0.0 { 2 * self.dim } else { 0 };
        4 + self.rotations.len() * self.dim + self.perm_pairs.len() + self.dim + helicity
    }

    fn project(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        if x.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: x.len(),
            });
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let re = DVector::from_fn(self.dim, |k, _| x[2 * k] / norm);
        let im = DVector::from_fn(self.dim, |k, _| x[2 * k + 1] / norm);
        Ok((re, im, norm))
    }

    /// Residual vector `r` with objective `|r|²`; optionally also `∂r/∂x`.
    fn evaluate(&self, x: &[f64], with_jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let (re, im, norm) = self.project(x)?;
        let d = self.dim;
        let c = &self.config;
        let mut r = DVector::zeros(self.n_residuals());
        // Jacobian w.r.t. y = (y_re | y_im) block layout; remapped at the end.
        let mut jy = with_jacobian.then(|| DMatrix::zeros(self.n_residuals(), 2 * d));
        let mut row = 0;

        let sc = c.w_conflict.sqrt();
        for o in [0, d - 1] {
            r[row] = sc * re[o];
            r[row + 1] = sc * im[o];
            if let Some(j) = jy.as_mut() {
                j[(row, o)] = sc;
                j[(row + 1, d + o)] = sc;
            }
            row += 2;
        }

        let p0: Vec<f64> = (0..d).map(|o| re[o] * re[o] + im[o] * im[o]).collect();

        let si = c.w_inv.sqrt();
        for rot in &self.rotations {
            let ure = rot * &re;
            let uim = rot * &im;
            for o in 0..d {
                r[row] = si * (ure[o] * ure[o] + uim[o] * uim[o] - p0[o]);
                if let Some(j) = jy.as_mut() {
                    for k in 0..d {
                        j[(row, k)] = si * 2.0 * ure[o] * rot[(o, k)];
                        j[(row, d + k)] = si * 2.0 * uim[o] * rot[(o, k)];
                    }
                    j[(row, o)] -= si * 2.0 * re[o];
                    j[(row, d + o)] -= si * 2.0 * im[o];
                }
                row += 1;
            }
        }

        let sp = c.w_perm.sqrt();
        for &(o, p, mult) in &self.perm_pairs {
            let s = sp * mult;
            r[row] = s * (p0[o] - p0[p]);
            if let Some(j) = jy.as_mut() {
                j[(row, o)] += s * 2.0 * re[o];
                j[(row, d + o)] += s * 2.0 * im[o];
                j[(row, p)] -= s * 2.0 * re[p];
                j[(row, d + p)] -= s * 2.0 * im[p];
            }
            row += 1;
        }

        let sm = c.w_mirror.sqrt();
        for o in 0..d {
            let m = mirror_index(o, self.n_players);
            r[row] = sm * (p0[o] - p0[m]);
            if let Some(j) = jy.as_mut() {
                if m != o {
                    j[(row, o)] += sm * 2.0 * re[o];
                    j[(row, d + o)] += sm * 2.0 * im[o];
                    j[(row, m)] -= sm * 2.0 * re[m];
                    j[(row, d + m)] -= sm * 2.0 * im[m];
                }
            }
            row += 1;
        }

        if c.w_helicity > 0.0 {
            // Jψ − μψ with μ = ⟨ψ|J|ψ⟩ = 2 y_reᵀ K y_im.
            let sh = c.w_helicity.sqrt();
            let k = &self.generator;
            let k_re = k * &re;
            let k_im = k * &im;
            let mu = 2.0 * re.dot(&k_im);
            for o in 0..d {
                r[row + o] = sh * (k_im[o] - mu * re[o]);
                r[row + d + o] = sh * (-k_re[o] - mu * im[o]);
            }
            if let Some(j) = jy.as_mut() {
                let dmu_re = &k_im * 2.0;
                let dmu_im = &k_re * -2.0;
                for o in 0..d {
                    for q in 0..d {
                        let delta = if o == q { mu } else { 0.0 };
                        j[(row + o, q)] = sh * (-delta - re[o] * dmu_re[q]);
                        j[(row + o, d + q)] = sh * (k[(o, q)] - re[o] * dmu_im[q]);
                        j[(row + d + o, q)] = sh * (-k[(o, q)] - im[o] * dmu_re[q]);
                        j[(row + d + o, d + q)] = sh * (-delta - im[o] * dmu_im[q]);
                    }
                }
            }
            row += 2 * d;
        }
        debug_assert_eq!(row, r.len());

        let jac = jy.map(|jy| {
            // ∂y/∂x = (I − y yᵀ)/|x|, then block layout → interleaved layout.
            let y = DVector::from_fn(2 * d, |i, _| if i < d { re[i] } else { im[i - d] });
            let jy_y = &jy * &y;
            let projected = (jy - jy_y * y.transpose()) / norm;
            DMatrix::from_fn(projected.nrows(), 2 * d, |i, col| {
                let k = col / 2;
                projected[(i, if col % 2 == 0 { k } else { d + k })]
            })
        });
        Ok((r, jac))
    }

    pub fn residuals(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.evaluate(x, false)?.0)
    }

    pub fn residuals_and_jacobian(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (r, j) = self.evaluate(x, true)?;
        Ok((r, j.expect("requested")))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residuals(x)?.norm_squared())
    }

    /// Analytic gradient `2 Jᵀ r`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (r, j) = self.residuals_and_jacobian(x)?;
        Ok((j.transpose() * r * 2.0).iter().copied().collect())
    }
}

/// Objective value of interleaved amplitude reals under `config`'s weights.
pub fn objective(amplitudes: &[f64], config: &SearchConfig) -> Result<f64> {
    Objective::new(config)?.value(amplitudes)
}

/// Interleaved reals of a state's amplitudes.
pub fn state_to_reals(state: &StateVector<f64>) -> Vec<f64> {
    state.amplitudes().iter().flat_map(|a| [a.re, a.im]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub state: StateVector<f64>,
    pub objective: f64,
    pub best_restart: usize,
    pub converged_restarts: usize,
    pub restarts: Vec<RestartSummary>,
}

struct LmOutcome {
    x: Vec<f64>,
    objective: f64,
    iterations: usize,
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}

fn levenberg_marquardt(obj: &Objective, mut x: Vec<f64>, max_iterations: usize) -> Result<LmOutcome> {
    normalize(&mut x);
    let (mut r, mut jac) = obj.residuals_and_jacobian(&x)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut stalls = 0;
    let mut iterations = 0;
    while iterations < max_iterations && cost > OBJECTIVE_FLOOR {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            normalize(&mut trial);
            let trial_cost = obj.value(&trial)?;
            if trial_cost < cost {
                let improvement = (cost - trial_cost) / cost;
                stalls = if improvement < 1e-9 { stalls + 1 } else { 0 };
                x = trial;
                (r, jac) = obj.residuals_and_jacobian(&x)?;
                cost = r.norm_squared();
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted || stalls >= 5 {
            break;
        }
    }
    Ok(LmOutcome {
        x,
        objective: cost,
        iterations,
    })
}

/// Rotates the global phase so the largest amplitude is real and positive.
fn fix_global_phase(x: &[f64]) -> Vec<Complex<f64>> {
    let amps: Vec<Complex<f64>> = x.chunks(2).map(|c| Complex::new(c[0], c[1])).collect();
    let lead = amps
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .unwrap_or(Complex::new(1.0, 0.0));
    let phase = lead.conj() / lead.norm();
    amps.into_iter().map(|a| a * phase).collect()
}

/// Multi-start search. Each restart draws its start point from its own
/// substream of `seed`; the best restart wins, ties to the lowest index.
pub fn search_state(config: &SearchConfig, seed: RngSeed) -> Result<SearchResult> {
    let obj = Objective::new(config)?;
    let outcomes: Vec<LmOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.substream(i as u64).rng();
            let x0: Vec<f64> = (0..obj.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            levenberg_marquardt(&obj, x0, config.max_iterations)
        })
        .collect::<Result<_>>()?;

    let restarts: Vec<RestartSummary> = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| RestartSummary {
            index,
            objective: o.objective,
            iterations: o.iterations,
            converged: o.objective <= config.tolerance,
        })
        .collect();
    let best = restarts
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)))
        .expect("restarts >= 1")
        .index;
    let amplitudes = fix_global_phase(&outcomes[best].x);
    let state = StateVector::new_unnormalized(config.n_players, amplitudes)?.normalized()?;
    Ok(SearchResult {
        state,
        objective: outcomes[best].objective,
        best_restart: best,
        converged_restarts: restarts.iter().filter(|r| r.converged).count(),
        restarts,
    })
}

/// Sorted outcome probabilities at one relative-angle point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintPoint {
    /// Angles of players 2..N in degrees; player 1 sits at 0.
    pub relative_degrees: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n_players: usize,
    pub points: Vec<FingerprintPoint>,
}

impl Fingerprint {
    /// Max absolute difference over matching points. Both fingerprints must
    /// come from the same grid.
    pub fn distance(&self, other: &Fingerprint) -> Result<f64> {
        if self.n_players != other.n_players {
            return Err(Error::DimensionMismatch {
                expected: self.n_players,
                found: other.n_players,
            });
        }
        if self.points.len() != other.points.len()
            || self.points.iter().zip(&other.points).any(|(a, b)| a.relative_degrees != b.relative_degrees)
        {
            return Err(Error::invalid("fingerprints were taken on different grids"));
        }
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .flat_map(|(a, b)| a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }
}

/// Relative angles `{0°, 15°, …, 165°}`.
pub fn default_relative_grid() -> Vec<f64> {
    (0..12).map(|k| 15.0 * k as f64).collect()
}

/// Points of `grid^(N−1)`, subsampled with a fixed seed when there are more
/// than [`FINGERPRINT_MAX_POINTS`].
pub fn fingerprint_points(n_players: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let total = grid.len().checked_pow(n_players as u32 - 1).unwrap_or(usize::MAX);
    let point = |mut i: usize| {
        let mut rel = vec![0.0; n_players - 1];
        for slot in rel.iter_mut().rev() {
            *slot = grid[i % grid.len()];
            i /= grid.len();
        }
        rel
    };
    if total <= FINGERPRINT_MAX_POINTS {
        return (0..total).map(point).collect();
    }
    let mut rng = FINGERPRINT_SEED.substream(n_players as u64).rng();
    let mut picked = index::sample(&mut rng, total, FINGERPRINT_MAX_POINTS).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(point).collect()
}

fn sorted_probs(state: &StateVector<f64>, degrees: &[f64]) -> Result<Vec<f64>> {
    let dist = rotated_distribution(state, &AngleConfig::from_degrees(degrees)?)?;
    let mut p = dist.probs().to_vec();
    p.sort_by(f64::total_cmp);
    Ok(p)
}

pub fn fingerprint(state: &StateVector<f64>, relative_grid: &[f64]) -> Result<Fingerprint> {
    if relative_grid.is_empty() {
        return Err(Error::invalid("empty relative-angle grid"));
    }
    let points = fingerprint_points(state.n_players(), relative_grid)
        .into_iter()
        .map(|rel| {
            let mut angles = vec![0.0];
            angles.extend_from_slice(&rel);
            Ok(FingerprintPoint {
                probs: sorted_probs(state, &angles)?,
                relative_degrees: rel,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Fingerprint {
        n_players: state.n_players(),
        points,
    })
}

/// Fingerprint distance minimized over relabelings of `s2`'s players.
pub fn fingerprint_distance(s1: &StateVector<f64>, s2: &StateVector<f64>, relative_grid: &[f64]) -> Result<f64> {
    let n = s1.n_players();
    if n != s2.n_players() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s2.n_players(),
        });
    }
    let reference = fingerprint(s1, relative_grid)?;
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let distances = perms
        .par_iter()
        .map(|perm| {
            let mut worst = 0.0f64;
            for p in &reference.points {
                let mut angles = vec![0.0];
                angles.extend_from_slice(&p.relative_degrees);
                let permuted: Vec<f64> = perm.iter().map(|&j| angles[j]).collect();
                let q = sorted_probs(s2, &permuted)?;
                for (a, b) in p.probs.iter().zip(&q) {
                    worst = worst.max((a - b).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(distances.into_iter().fold(f64::INFINITY, f64::min))
}

/// Equivalent iff the permutation-minimized fingerprint distance on the
/// default grid is below `tol`.
pub fn states_equivalent(s1: &StateVector<f64>, s2: &StateVector<f64>, tol: f64) -> Result<bool> {
    Ok(fingerprint_distance(s1, s2, &default_relative_grid())? < tol)
}
