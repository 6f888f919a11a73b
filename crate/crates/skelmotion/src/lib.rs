//! Physics-augmented tuple-transformer pipeline for skeleton sequences.
//!
//! The crate couples a tuple self-attention encoder over skeleton sequences
//! with two generative decoders — one driven by a differentiable Lagrangian
//! point-mass simulation with LCP ground contact, one purely data-driven —
//! and a severity classifier over the shared latent space. Everything is
//! built on a small replayable autodiff graph so each differentiable path
//! can be verified against central finite differences.
//!
//! Entry points:
//! - [`diffcore`]: tensors, the recorded computation graph, Adam.
//! - [`physdyn`]: point-mass skeleton dynamics and the projected
//!   Gauss-Seidel LCP solver, in both plain and graph-traced form.
//! - [`skeldata`]: loading, preprocessing, tuple splitting, synthetic data,
//!   fold construction.
//! - [`encoder`] / [`decoders`]: the model halves; [`model`] assembles them.
//! - [`trainer`]: losses, training loop, metrics, cross-validation,
//!   ablations, embedding export.
//! - [`gradcheck`]: the finite-difference verification harness.
//!
//! The `skelmotion` binary exposes the same functionality as subcommands;
//! the `examples/` directory has one runnable walkthrough per capability.

pub mod checkpoint;
pub mod config;
pub mod decoders;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod nn;
pub mod physdyn;
pub mod skeldata;
pub mod trainer;

pub use error::{Error, Result};
