//! Flow-matching sampler with reflective guidance, analytic verification
//! oracles, and a seeded experiment harness.
//!
//! The crate builds up in layers: [`numerics`] holds the dense kernels and
//! the seeded generator, [`embedding`] the semantic parameterization,
//! [`fields`] the analytic velocity fields and their exact posteriors,
//! [`sampler`] the Euler integrator and the three-stage reflective sampler,
//! [`theory`] the numerical checks of the first/second-order claims,
//! [`train`] a small conditional flow-matching MLP, and [`harness`] the
//! configuration, persistence, and plotting front end used by the CLI.
//!
//! Seed-parallel experiment loops run on a work-stealing pool when the
//! `parallel` feature (default) is enabled and fall back to a plain
//! sequential loop otherwise; results merge in seed order either way.

// the dense kernels read as textbook indexed math
#![allow(clippy::needless_range_loop)]

pub mod embedding;
pub mod error;
pub mod exec;
pub mod fields;
pub mod harness;
pub mod numerics;
pub mod sampler;
pub mod theory;
pub mod train;

pub use error::{Error, Result};

/// Version string stamped into every output file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
