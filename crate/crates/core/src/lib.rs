//! Learning partitioned foreground/background representations whose cross
//! mutual information is driven down by label-conditioned critics estimating
//! Wasserstein-1 distances, with a gradient penalty enforcing approximate
//! 1-Lipschitzness.
//!
//! The crate is organized around:
//! - [`autodiff`]: tape-based reverse-mode differentiation, double-backward
//!   capable (needed by the gradient penalty),
//! - [`models`]: the partitioned extractor, linear heads and critics,
//! - [`sampling`] and [`objectives`]: the four batch distributions and the
//!   critic/extractor losses,
//! - [`trainer`]: alternating Adam optimization,
//! - [`synth`]: a factored synthetic dataset with controllable
//!   foreground/background correlation,
//! - [`probe`]: frozen-extractor linear probing and the correlation
//!   robustness experiment,
//! - [`oracle`]: exact transportation-problem ground truth and a binned
//!   mutual-information diagnostic,
//! - [`guide`]: prompt construction and guide-image composition against a
//!   pluggable generation backend.

pub mod array;
pub mod autodiff;
pub mod error;
pub mod fdcheck;
pub mod rng;

pub use array::NumArray;
pub use error::{CoreError, Result};
pub use rng::SplitMix64;
