//! File formats, training orchestration and evaluation for `dimlight-core`.
//!
//! - [`io`]: image decoding/encoding and paired dataset directories
//! - [`checkpoint`]: the versioned binary parameter container
//! - [`config`]: run configuration with environment and command-line overrides
//! - [`pipeline`]: pretraining, training and ablation loops
//! - [`eval`]: batch enhancement and metric reports
//! - [`synth`]: procedurally generated datasets for probes and smoke runs

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
