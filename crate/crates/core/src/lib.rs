//! Discretization, adjoint solvers and optimal-control drivers for the
//! controlled two-dimensional tidal dynamics system.
//!
//! The state `(u, xi)` solves
//!
//! ```text
//! u_t + A u + B(u) + grad xi = f + U,   xi_t + div(h u) = 0,   u = 0 on the boundary
//! ```
//!
//! on a rectangle. Module layout follows the data flow: [`grid`] provides
//! fields and operators, [`model`] the physical operators, [`forward`] and
//! [`tangent_adjoint`] the time integrators, [`cost_grad`] and [`optimize`] the
//! control layer, [`verify`] executable property checks and [`io`] the
//! configuration and file formats.

pub mod cost_grad;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod model;
pub mod optimize;
pub mod tangent_adjoint;
pub mod verify;

pub use error::{Error, Result};
