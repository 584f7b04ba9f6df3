//! Self-similar profiles of the fast diffusion equation `u_t = Δu^m`,
//! `0 < m < (n−2)/n`, and simulation of radial solutions near extinction.

pub mod asymptotics;
pub mod error;
pub mod fd;
pub mod ode;
pub mod params;
pub mod pde;
pub mod profiles;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use params::{derive, validate, DerivedConstants, ParamSet, ValidParams};
pub use profiles::{ProfileKind, RadialProfile, SGrid, SolverConfig};
