//! Seizure-detection pipeline: signals, features, HMM decoding, PCA,
//! the six detection systems, and epoch-level scoring.

mod binio;
pub mod config;
pub mod dimred;
pub mod error;
pub mod features;
pub mod hmm;
pub mod scoring;
pub mod signal;
pub mod synth;
pub mod systems;

pub use error::{CoreError, ErrorClass, Result};
