//! Simulation engine for Mølmer–Sørensen entangling gates on Kerr-cat qubits.

pub mod dynamics;
pub mod error;
pub mod gates;
pub mod hilbert;
pub mod model;
pub mod noise;
pub mod protocols;
pub mod states;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
