//! Rotary position embedding analysis and position-ID layout tools for
//! multimodal transformers.
//!
//! The crate is split along the pipeline it models:
//!
//! - [`rope`]: exact rotary embedding (frequencies, rotation, relative dot product).
//! - [`decay`]: long-term decay checks. Summation-by-parts bound, closed-form
//!   expectation under shifted normals, and seeded Monte Carlo estimates.
//! - [`layout`]: dynamic high-resolution geometry (resolution selection,
//!   padding, unpadding, token sequence layout).
//! - [`id_align`]: position-ID assignment where high-resolution tokens inherit
//!   the IDs of the thumbnail tokens covering the same image region.
//! - [`attention`]: synthetic attention-score and ID-distance matrices used to
//!   compare sequential IDs with aligned IDs.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default). Every such loop also has a sequential path selected through
//! [`Execution`], and results never depend on which one ran.

pub mod attention;
pub mod decay;
mod error;
mod exec;
pub mod id_align;
pub mod layout;
pub mod rng;
pub mod rope;

pub use error::{Error, Result};
#[cfg(feature = "parallel")]
pub use exec::configure_threads;
pub use exec::Execution;
