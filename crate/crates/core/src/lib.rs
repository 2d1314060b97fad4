//! Joint falsification and simulator fidelity-settings optimization.
//!
//! The inner loop ([`falsify`]) searches environment configurations that
//! minimize the robustness of a safety specification ([`stl`]) under a
//! given fidelity setting of a low-fidelity simulator ([`sim`]). The outer
//! loop ([`bo`]) tunes the fidelity setting with GP-UCB so that the
//! low-fidelity trajectories match high-fidelity ones ([`loss`]). The
//! [`campaign`] module nests the two loops, and [`analysis`] provides
//! empirical Lipschitz, sensitivity, sample-complexity and convergence
//! estimators.

pub mod analysis;
pub mod bo;
pub mod campaign;
pub mod error;
pub mod falsify;
pub mod loss;
pub mod sim;
pub mod space;
pub mod stl;

pub use error::{Error, Result};
pub use space::{
    latin_hypercube, sample_uniform, EnvironmentConfig, EnvironmentSpace, FidelitySetting, FidelitySpace, Seed, Task,
    Trajectory,
};
pub use stl::{robustness, Robustness, SafetySpec};
