//! Delivery time slot pricing under multinomial logit demand.
//!
//! The crate provides the exact dynamic program for small instances, three
//! sample-based approximations of the value function (affine, Lagrangian
//! cuts and gradient-bounded cuts), Monte Carlo validation with
//! distribution-free lower confidence bounds, and scenario generators.

// Validation uses negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cuts;
pub mod error;
pub mod exact_dp;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod pricing;
pub mod rng;
pub mod scenario;
pub mod trainer;
pub mod validation;
pub mod value;
pub mod vfa_affine;
pub mod vfa_gbdp;
pub mod vfa_nlsddp;

pub use error::{Error, Result};
pub use model::{Instance, Price, PriceVector, StateVector};
