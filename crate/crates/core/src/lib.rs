//! Desk-scale mixture-of-experts robustness toolkit.
//!
//! The crate has three layers:
//!
//! * linear-expert theory — least-squares solutions under fixed routing,
//!   subspace separation constants, and verified norm bounds relating
//!   expert Lipschitz constants to the dense model ([`theory`], [`smooth`]);
//! * a sparse noisy top-K classifier with balancing losses and a manual
//!   gradient training loop ([`sparse`]);
//! * l-inf gradient attacks, sweep evaluation, and adversarial training
//!   ([`attack`], [`metrics`]), orchestrated by the `moe-lab` CLI
//!   ([`harness`]).

pub mod data;
pub mod error;
pub mod numeric;
pub mod smooth;
pub mod theory;

pub use error::{Error, Result};
