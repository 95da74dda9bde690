//! Common-information based perfect Bayesian equilibria (CIB-PBE) for finite
//! dynamic games with asymmetric information.

pub mod error;
pub mod model;

pub use error::{Diagnostic, Error, Result};
pub mod belief;
pub mod dp;
pub mod games;
pub mod stage;
pub mod strategy;
pub mod verify;
