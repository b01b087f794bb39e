//! Selective gradient encryption with additive noise as a defense against gradient
//! inversion in federated learning.
//!
//! The crate is organised along the data path
//! `x -> g(x) -> R g(x) -> u = R g(x) + noise -> y = P u -> attack(y)`:
//!
//! - [`nn`]: toy models with exact parameter gradients and input Jacobians of them.
//! - [`defense`]: mask selection, restriction/prolongation and noise injection.
//! - [`bounds`]: Fisher information of the defended channel, gradient exposure and the
//!   reconstruction-error lower bound.
//! - [`utility`]: critical noise threshold, Gaussian norm concentration and one-step
//!   descent checks.
//! - [`attack`]: gradient-matching inversion attacks and reconstruction metrics.
//! - [`fedsim`]: deterministic federated training with fixed or adaptive noise.
//! - [`harness`]: configuration, experiment pipelines and on-disk artifacts.

pub mod attack;
pub mod bounds;
pub mod defense;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod utility;

pub use error::{Error, Result};
