//! Lattice gas of active and passive particles with size exclusion: a
//! kinetic Monte Carlo simulator, the limiting cross-diffusion PDE, the
//! self-diffusion and mobility coefficients, and checks of the
//! microscopic identities behind the hydrodynamic limit.

pub mod angular;
pub mod error;
pub mod harness;
pub mod kmc;
pub mod lattice;
pub mod micro;
pub mod pde;
pub mod sampling;
pub mod transport;

pub use error::{Error, Result};
