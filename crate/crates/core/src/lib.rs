//! Simulation toolkit for the entangled-photon approach to the two-machine
//! competitive bandit: state construction and certification, numerical state
//! search, the game itself, and decentralized realignment agents.
//!
//! The quantum modules are generic over [`Real`]; the aliases below fix them
//! to `f64`, which is what the rest of the crate uses.

pub mod agents;
pub mod error;
pub mod experiments;
pub mod game;
pub mod qcore;
pub mod rules;
pub mod scalar;
pub mod solver;
pub mod states;

pub use error::{Error, Result};
pub use qcore::RngSeed;
pub use scalar::Real;

pub type Complex = num_complex::Complex<f64>;
pub type StateVector = qcore::StateVector<f64>;
pub type AngleConfig = qcore::AngleConfig<f64>;
pub type OutcomeDistribution = qcore::OutcomeDistribution<f64>;
pub type ExactMetrics = game::ExactMetrics<f64>;
