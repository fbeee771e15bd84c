//! Reverse-engineered transport of atoms in non-harmonic traps.
//!
//! The crate designs trap-bottom trajectories `x₀(t)` that carry a particle
//! over a distance `d` in time `t_f` without residual excitation, then
//! checks the designs with classical one-body integration, thermal
//! ensembles, moment equations and wave-packet propagation.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod perturb;
pub mod ode;
pub mod poly;
pub mod quantum;
pub mod quad;
pub mod roots;
pub mod sweep;
pub mod trajectory;
pub mod traps;

pub use error::{Error, Result};
