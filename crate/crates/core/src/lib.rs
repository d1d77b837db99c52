//! Unadjusted kinetic Langevin Monte Carlo for mean-field interacting
//! particle systems.
//!
//! The crate is organized around the chain itself ([`chain`]), the energy
//! functionals it samples ([`model`]), closed-form constants of the
//! associated convergence theory ([`theory`]), empirical Lyapunov drift
//! checks ([`lyapunov`]), grid-based reference solutions ([`oracle`]),
//! Monte Carlo estimators ([`risk`]) and a file-based experiment driver
//! ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod risk;
pub mod theory;

pub use error::{Error, Result};
