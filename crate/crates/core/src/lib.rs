//! Boundary-control reconstruction of distances in the half-plane from
//! Neumann-to-Dirichlet wave data.

pub mod boundary_ops;
pub mod config;
pub mod control;
pub mod distance;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod quadrature;
pub mod wave_sim;

pub use error::{Error, Result};
