//! Hierarchical latent spaces with a decremental information bottleneck.
//!
//! This crate holds everything that is pure computation: a small f64 tensor
//! type with a reverse-mode tape, Adam, the diagonal-Gaussian latent
//! hierarchy and its objective, the encoder/decoder variants, a procedural
//! factor-labeled sprite dataset, and the disentanglement metrics.
//!
//! It is `no_std` and only needs `alloc`. File formats, configuration and the
//! command line live in the companion `devae-lab` crate.

#![no_std]
// `!(x > 0.0)` is how NaN gets rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

mod kernels;
mod linalg;

pub use error::{Error, Result};
pub use tensor::Tensor;
