//! Desk-scale laboratory for memory-augmented text generation.
//!
//! The pipeline: sentence pairs from a biography corpus are encoded into
//! latents, written to a least-squares associative [`memory`], read back
//! with a prompt query, optionally rescaled, and decoded by a [`codec`].
//! The [`harness`] concatenates the generations into a synthesized entry,
//! scores it against the reference text with [`metrics`] and records the
//! latents for [`geometry`] analysis.

// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod latent;
pub mod memory;
pub mod metrics;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
pub use latent::LatentVector;

#[cfg(test)]
use openblas_src as _;
