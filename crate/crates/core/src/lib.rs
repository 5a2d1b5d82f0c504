//! Min-driven coalescence: exact stochastic simulation, the piecewise
//! hydrodynamic ODE, and experiments relating the two.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod hydro;
pub mod lifespan;
pub mod model;
pub mod ode;
pub mod rng;
pub mod ssa;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
pub use model::{Kernel, ParticleState, Phi, Size};
