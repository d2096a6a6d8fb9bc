//! Numerical core of a low-light image enhancement toolkit.
//!
//! Everything here is pure computation over in-memory grids: the 2D DFT
//! and focal frequency loss, the two-stream contrastive illumination
//! encoder with its InfoNCE objective, the feature-aware reconstruction
//! network, the supervised objective, optimizers, schedules and image
//! quality metrics. The crate builds without `std` (with `alloc`); file
//! formats, CLIs and training orchestration live in the `dimlight` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod encoder;
pub mod error;
mod fft;
pub mod irn;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Image, Tensor};
