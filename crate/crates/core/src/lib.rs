//! Numerical workbench for hard stars: static solutions of the TOV system with
//! the stiff equation of state `p = ρ - 1`, the second variation of their mass,
//! the linearized radial dynamics and the oscillation spectrum.

pub mod background;
pub mod error;
pub mod evolution;
pub mod modes;
pub mod numerics;
pub mod variation;
pub mod verify;

pub use error::{Error, Result};
