//! Markovian master equations for the internal dynamics of an immobile
//! quantum system in a thermal gas, built from multichannel scattering
//! amplitudes, together with the tools to integrate and unravel them.
//!
//! Units: ħ = 1 throughout. Energies, masses and lengths are in any
//! consistent user system with `β` in inverse energy; momenta are then
//! wavenumbers and rates come out in inverse time with `t = ħ/energy`.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod jumps;
pub mod monitoring;
pub mod operator;
mod quadrature;
pub mod random;
pub mod rng;
pub mod scattering;
pub mod thermal;

pub use error::{Error, Result};
pub use operator::{CMatrix, CompositeSpace, Operator, Superoperator};
