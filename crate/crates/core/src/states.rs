//! Closed-form optimal states and the JSON state-file format.
//!
//! Amplitudes are written in ket order, player 1 leftmost. Cube roots of unity
//! are built from exact decimal components (`-1/2 ± i√3/2`) rather than
//! `exp`, so the phase sums cancel to the last bit where possible.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::StateVector;
use crate::scalar::Real;

/// A `±` selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

impl Sign {
    pub fn value<T: Real>(self) -> T {
        match self {
            Sign::Plus => T::one(),
            Sign::Minus => -T::one(),
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" | "p" => Ok(Sign::Plus),
            "-" | "minus" | "m" => Ok(Sign::Minus),
            other => Err(Error::invalid(format!("expected + or -, got {other:?}"))),
        }
    }
}

fn one<T: Real>() -> Complex<T> {
    Complex::new(T::one(), T::zero())
}

fn cis<T: Real>(phi: T) -> Complex<T> {
    Complex::from_polar(T::one(), phi)
}

/// `e^{±2iπ/3}`.
pub fn cube_root<T: Real>(sign: Sign) -> Complex<T> {
    let half = T::lit(0.5);
    let im = T::lit(3.0).sqrt() * half;
    Complex::new(-half, sign.value::<T>() * im)
}

/// `(|HV⟩ + e^{iφ}|VH⟩)/√2`.
pub fn psi2<T: Real>(phi: T) -> StateVector<T> {
    StateVector::from_terms(2, &[("HV", one()), ("VH", cis(phi))]).expect("fixed layout")
}

/// `(|HV⟩ − |VH⟩)/√2`, invariant under any common rotation.
pub fn singlet<T: Real>() -> StateVector<T> {
    StateVector::from_terms(2, &[("HV", one()), ("VH", -one::<T>())]).expect("fixed layout")
}

/// Three-photon optimal state
/// `[|HHV⟩ + z|HVH⟩ + z²|VHH⟩ ± i(|VVH⟩ + z|VHV⟩ + z²|HVV⟩)]/√6`,
/// with `z = e^{±2iπ/3}` chosen by `root`. `(Plus, Plus)` is the reference state.
pub fn psi3<T: Real>(root: Sign, i_sign: Sign) -> StateVector<T> {
    let z = cube_root::<T>(root);
    let z2 = z.conj();
    let i = Complex::new(T::zero(), i_sign.value::<T>());
    StateVector::from_terms(
        3,
        &[
            ("HHV", one()),
            ("HVH", z),
            ("VHH", z2),
            ("VVH", i),
            ("VHV", i * z),
            ("HVV", i * z2),
        ],
    )
    .expect("fixed layout")
}

/// Symmetric four-photon state over the 2-2 split outcomes,
/// `[|HHVV⟩ + |VVHH⟩ + z(|HVHV⟩ + |VHVH⟩) + z²(|HVVH⟩ + |VHHV⟩)]/√6`.
pub fn s4<T: Real>(root: Sign) -> StateVector<T> {
    let z = cube_root::<T>(root);
    let z2 = z.conj();
    StateVector::from_terms(
        4,
        &[
            ("HHVV", one()),
            ("VVHH", one()),
            ("HVHV", z),
            ("VHVH", z),
            ("HVVH", z2),
            ("VHHV", z2),
        ],
    )
    .expect("fixed layout")
}

/// Asymmetric four-photon family over the 3-1 split outcomes. Every term is
/// paired with its H/V mirror at opposite sign:
///
/// `[(|HHHV⟩−|VVVH⟩) + e^{iφ}(|HHVH⟩−|VVHV⟩) − (|HVHH⟩−|VHVV⟩) − e^{iφ}(|VHHH⟩−|HVVV⟩)]/√8`
///
/// for `branch = Plus`. `Minus` swaps which of the last two pairs carries the
/// phase, i.e. picks `a₄ = −a₁` instead of `a₃ = −a₁`.
pub fn a4<T: Real>(phi: T, branch: Sign) -> StateVector<T> {
    let e = cis(phi);
    let (c3, c4) = match branch {
        Sign::Plus => (one(), e),
        Sign::Minus => (e, one()),
    };
    StateVector::from_terms(
        4,
        &[
            ("HHHV", one()),
            ("VVVH", -one::<T>()),
            ("HHVH", e),
            ("VVHV", -e),
            ("HVHH", -c3),
            ("VHVV", c3),
            ("VHHH", -c4),
            ("HVVV", c4),
        ],
    )
    .expect("fixed layout")
}

/// Named state families, parsed from the CLI syntax
/// `singlet | psi2:<deg> | psi3[:<root>:<i>] | s4[:<root>] | a4:<deg>[:<branch>] | file:<path>`.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpec {
    Psi2 { phi: f64 },
    Singlet,
    Psi3 { root: Sign, i_sign: Sign },
    S4 { root: Sign },
    A4 { phi: f64, branch: Sign },
    File(PathBuf),
}

impl StateSpec {
    pub fn n_players(&self) -> Option<usize> {
        match self {
            StateSpec::Psi2 { .. } | StateSpec::Singlet => Some(2),
            StateSpec::Psi3 { .. } => Some(3),
            StateSpec::S4 { .. } | StateSpec::A4 { .. } => Some(4),
            StateSpec::File(_) => None,
        }
    }

    pub fn build<T: Real>(&self) -> Result<StateVector<T>> {
        Ok(match self {
            StateSpec::Psi2 { phi } => psi2(T::lit(*phi)),
            StateSpec::Singlet => singlet(),
            StateSpec::Psi3 { root, i_sign } => psi3(*root, *i_sign),
            StateSpec::S4 { root } => s4(*root),
            StateSpec::A4 { phi, branch } => a4(T::lit(*phi), *branch),
            StateSpec::File(path) => load_state(path)?.cast(),
        })
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Psi2 { phi } => write!(f, "psi2:{}", phi.to_degrees()),
            StateSpec::Singlet => write!(f, "singlet"),
            StateSpec::Psi3 { root, i_sign } => {
                write!(f, "psi3:{}:{}", root.symbol(), i_sign.symbol())
            }
            StateSpec::S4 { root } => write!(f, "s4:{}", root.symbol()),
            StateSpec::A4 { phi, branch } => {
                write!(f, "a4:{}:{}", phi.to_degrees(), branch.symbol())
            }
            StateSpec::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(StateSpec::File(PathBuf::from(path)));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let degrees = |x: &str| -> Result<f64> {
            x.trim()
                .parse::<f64>()
                .map(f64::to_radians)
                .map_err(|_| Error::invalid(format!("bad angle {x:?} in state spec {s:?}")))
        };
        let sign = |i: usize| parts.get(i).map(|p| p.parse()).unwrap_or(Ok(Sign::Plus));
        match (parts[0], parts.len()) {
            ("singlet", 1) => Ok(StateSpec::Singlet),
            ("psi2", 2) => Ok(StateSpec::Psi2 {
                phi: degrees(parts[1])?,
            }),
            ("psi3", 1 | 3) => Ok(StateSpec::Psi3 {
                root: sign(1)?,
                i_sign: sign(2)?,
            }),
            ("s4", 1 | 2) => Ok(StateSpec::S4 { root: sign(1)? }),
            ("a4", 2 | 3) => Ok(StateSpec::A4 {
                phi: degrees(parts[1])?,
                branch: sign(2)?,
            }),
            _ => Err(Error::invalid(format!("unknown state spec {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    n_players: usize,
    amplitudes: Vec<[f64; 2]>,
}

/// Norm deviation at and beyond which a state file is rejected.
pub const STATE_FILE_REJECT: f64 = 1e-3;
/// Norm deviation beyond which loading renormalizes with a warning.
pub const STATE_FILE_WARN: f64 = 1e-6;

/// A state read from disk plus the original norm if it had to be rescaled.
#[derive(Clone, Debug)]
pub struct LoadedState {
    pub state: StateVector<f64>,
    pub renormalized_from: Option<f64>,
    pub warning: Option<String>,
}

/// JSON text of a state, every number with 17 significant digits.
pub fn state_to_json(state: &StateVector<f64>) -> String {
    let mut out = format!("{{\n  \"n_players\": {},\n  \"amplitudes\": [", state.n_players());
    for (i, a) in state.amplitudes().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("\n    [{:.16e}, {:.16e}]", a.re, a.im));
    }
    out.push_str("\n  ]\n}\n");
    out
}

pub fn state_from_json(text: &str, origin: &Path) -> Result<LoadedState> {
    let malformed = |reason: String| Error::MalformedStateFile {
        path: origin.to_path_buf(),
        reason,
    };
    let file: StateFile = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let amplitudes = file
        .amplitudes
        .iter()
        .map(|[re, im]| Complex::new(*re, *im))
        .collect();
    let raw = StateVector::new_unnormalized(file.n_players, amplitudes).map_err(|e| match e {
        Error::AmplitudeCount { .. } | Error::InvalidPlayerCount(_) | Error::InvalidParameter(_) => {
            malformed(e.to_string())
        }
        other => other,
    })?;
    let norm = raw.norm();
    let deviation = (norm - 1.0).abs();
    if !(deviation < STATE_FILE_REJECT) {
        return Err(malformed(format!(
            "norm {norm} deviates from 1 by {deviation:.3e} (limit {STATE_FILE_REJECT:e})"
        )));
    }
    if deviation <= f64::NORM_TOLERANCE {
        return Ok(LoadedState {
            state: raw,
            renormalized_from: None,
            warning: None,
        });
    }
    let warning = (deviation > STATE_FILE_WARN)
        .then(|| format!("state norm {norm} deviates from 1 by {deviation:.3e}; renormalized"));
    Ok(LoadedState {
        state: raw.normalized()?,
        renormalized_from: Some(norm),
        warning,
    })
}

pub fn save_state(state: &StateVector<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, state_to_json(state)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_state_with_report(path: impl AsRef<Path>) -> Result<LoadedState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    state_from_json(&text, path)
}

pub fn load_state(path: impl AsRef<Path>) -> Result<StateVector<f64>> {
    load_state_with_report(path).map(|l| l.state)
}
