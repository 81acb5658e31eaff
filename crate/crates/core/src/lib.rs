//! Conditional discrete diffusion over short gesture-token sequences.
//!
//! The crate is `no_std` and needs only `alloc`. It contains:
//!
//! * [`tensor`], [`autodiff`], [`optim`]: dense `f64` tensors, a
//!   define-by-run reverse-mode tape and Adam; [`gradcheck`] compares the
//!   tape against central differences.
//! * [`diffusion`]: the multinomial corruption schedule, its closed-form
//!   cumulative marginals, the exact posterior and the reverse sampler.
//! * [`conditioning`] and [`denoiser`]: the conditioned transformer that
//!   predicts clean sequences, and its training loop.
//! * [`data`]: windowing, splits and a seeded synthetic generator.
//! * [`evaluation`]: top-k accuracy, weighted F1, per-surgeon token
//!   distributions, embedding export rows.
//! * [`privacy`]: membership-inference auditing of surgeon embeddings.
//!
//! File formats, checkpoints and the command line live in the `gestdiff`
//! crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod conditioning;
pub mod data;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod privacy;
pub mod rng;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;
