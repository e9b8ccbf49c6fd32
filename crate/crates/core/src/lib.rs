//! Simulation toolkit for model privacy: defenders perturb query responses
//! under a utility budget, attackers rebuild the model from the perturbed
//! responses, and the harness measures how well the model was protected.

pub mod attackers;
pub mod defenses;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod seeds;
pub mod targets;

pub use error::{Error, Result};
