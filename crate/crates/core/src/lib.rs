//! Deterministic and Brownian dynamics of inextensible semiflexible filaments
//! in Stokes flow.
//!
//! Filaments are discretized by tangent vectors on a Chebyshev grid, with
//! hydrodynamics from Rotne-Prager-Yamakawa line integrals, steric repulsion from
//! a Gaussian-smoothed double integral, and transient cross-linking through a
//! Gillespie update.

pub mod app;
pub mod error;
pub mod filament;
pub mod linalg;
pub mod mobility;
pub mod network;
pub mod spectral;
pub mod sterics;
pub mod stepper;
pub mod validation;

pub use error::{Error, Result};
