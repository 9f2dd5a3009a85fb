//! File formats, synthetic data, the training engine and the command line
//! for the skeleton + infrared action recognizer in `fusion-core`.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod inspect;
pub mod irio;
pub mod ntu;
pub mod report;
pub mod run;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
