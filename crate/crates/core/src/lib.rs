//! Kernels, reverse-mode differentiation, preprocessing and network
//! definitions for skeleton + infrared action recognition.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, datasets and the training loop live in the `fusion`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod conv;
pub mod error;
pub mod graph;
pub mod infrared;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod resample;
pub mod rng;
pub mod skeleton;
pub mod splits;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamKind, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
