//! Momentum-based adversarial attacks against small image classifiers.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure computation:
//!
//! - [`tensor`]: dense `f64` tensors, zero-padded convolution, softmax
//!   cross-entropy and a central finite-difference gradient oracle.
//! - [`model`]: two fixed classifier architectures (MLP and small CNN) with
//!   analytic input gradients and minibatch SGD training, optionally with
//!   FGSM adversarial training.
//! - [`attack`]: FGSM, momentum accumulation, input diversity,
//!   translation-invariant gradient smoothing and the iterative single-model
//!   attack built from them.
//! - [`ensemble`]: bagging, stacking and BAST (bagging-and-stacking) ensemble
//!   attacks plus the without-stacking and without-bagging ablations.
//! - [`evaluation`]: the at-least-non-targeted outcome classification and
//!   score.
//!
//! File formats, dataset loading and the experiment driver live in the
//! `bast-harness` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod data;
pub mod ensemble;
mod error;
pub mod evaluation;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
