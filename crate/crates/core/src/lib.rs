//! Diffusion sampling over SE(3)-invariant point sets.
//!
//! The crate maps between pairwise distances and 3D coordinates, runs
//! reverse-time samplers driven by distance-space scores, and ships the
//! numerical experiments used to check those maps and samplers.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod mds_oracle;
pub mod metrics;
pub mod samplers;
pub mod seed;
pub mod spectral;

pub use error::{Error, Result};
