//! Core numerics for a laboratory that studies loss of plasticity in
//! continual learning.
//!
//! The crate provides, bottom-up:
//!
//! - [`rng`] — deterministic PCG32 random streams addressed by
//!   `(seed, stream_id)`;
//! - [`linalg`] — dense f64 matrices with bit-deterministic products,
//!   power iteration, Jacobi eigenvalues, and linear solves;
//! - [`nn`] — a small fully-connected network (LayerNorm + ReLU) with
//!   softmax cross-entropy on soft targets and an Adam optimizer;
//! - [`envs`] — non-stationary task generators: random relabeling, pixel
//!   permutation, random sequence-to-sequence mappings, and a bigram
//!   substitution cipher, plus IDX and text dataset I/O;
//! - [`transitions`] — gradual-change schedules between consecutive tasks
//!   (output/input interpolation and mixed task sampling) with
//!   compute-matched stage streams;
//! - [`mitigations`] — plasticity-preserving baselines: L2 regularization,
//!   shrink-and-perturb, spectral regularization, and dormant-unit
//!   recycling;
//! - [`metrics`] — accuracy, corpus BLEU-2, sharpness and dormancy probes,
//!   and the experiment record schema;
//! - [`theory`] — quadratic-loss convergence checks for gradually
//!   reparameterized objectives.

pub mod envs;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mitigations;
pub mod nn;
pub mod rng;
pub mod theory;
pub mod transitions;

pub use error::{CoreError, Result};
pub use linalg::Matrix;
pub use rng::RngStream;
