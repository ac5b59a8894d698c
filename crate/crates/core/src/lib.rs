//! Core library for transport-weighted autoencoder training.
//!
//! The crate is organised around a small set of building blocks:
//!
//! * [`tensor`] — a dense row-major 2-D array of `f64` used throughout.
//! * [`nn`] — a minimal MLP engine (dense layers, activations, losses,
//!   backprop, Adam/SGD) designed for exact reproducibility rather than speed.
//! * [`ot`] — discrete optimal transport: exact EMD via minimum-cost flow,
//!   closed-form 1-D Wasserstein distances, and sliced approximations.
//! * [`weighting`] — turns per-subject transport distances into loss weights
//!   for the group and each subject.
//! * [`data`] — labelled multi-subject datasets: CSV I/O, z-score
//!   normalisation, leave-one-subject-out splits, and a synthetic generator.
//! * [`model`] — the autoencoder + classifier model, its composite loss, and
//!   the training loop.
//! * [`eval`] — latent-space separation metrics, PCA projection, the LOSO
//!   harness, and baseline-vs-weighted comparisons.
//!
//! All randomness is driven by named ChaCha8 streams derived from a single
//! root seed (see [`seeds`]), so every public operation is bit-reproducible
//! for a fixed seed and input.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod ot;
pub mod seeds;
pub mod tensor;
pub mod weighting;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::Tensor2;
