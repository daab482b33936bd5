//! Modeling, fixed-structure H-infinity tuning and nonlinear simulation of
//! multivariable grid-forming converters with cascaded voltage/current
//! controllers.
//!
//! The pipeline runs bottom-up: [`plant`], [`cascade`] and [`gfm`] define the
//! nonlinear per-unit model, [`closedloop`] composes and solves it for an
//! equilibrium, [`linear`] linearizes it into the `w -> z` channel system,
//! [`hinf`] evaluates and minimizes the weighted H-infinity objective, and
//! [`sim`] integrates the nonlinear loop through step scenarios.

pub mod cascade;
pub mod cli;
pub mod closedloop;
pub mod config;
pub mod error;
pub mod gfm;
pub mod hinf;
pub mod lft;
pub mod linear;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
