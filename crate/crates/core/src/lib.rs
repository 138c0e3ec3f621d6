//! Desk-scale testbed for generalization bounds of unsupervised
//! cross-domain mapping with Wasserstein GANs.
//!
//! Synthetic domain pairs with known target maps stand in for image data,
//! so every bound term can be estimated and compared against the true risk.

pub mod bounds;
pub mod distill;
pub mod domains;
pub mod error;
pub mod evalstats;
pub mod experiments;
pub mod hyperband;
pub mod nn;
pub mod nonunique;
pub mod rng;
pub mod training;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
