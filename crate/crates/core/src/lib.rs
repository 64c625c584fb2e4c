//! Workbench for logits-level adversarial defense.
//!
//! The pipeline: train a small image classifier ([`classifier`]), attack it
//! ([`attacks`]), collect clean/adversarial logits pairs and train a logits
//! correction network on them ([`defender`]), then explain what the corrector
//! learned ([`analysis`]). [`io`] holds the dataset loader and on-disk formats.

pub mod analysis;
pub mod attacks;
pub mod classifier;
pub mod defender;
pub mod error;
pub mod io;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
