//! Ambisonic-to-Ambisonic speech separation toolkit.
//!
//! Separates a reverberant first-order Ambisonic two-speaker mixture into
//! per-speaker Ambisonic signals by masking in the plane-wave domain with a
//! triple-path transformer, and ships everything needed to train and
//! evaluate such models at desk scale: a shoebox room simulator producing
//! Ambisonic impulse responses, a learned time-feature codec, baseline
//! separators, scale-invariant multichannel metrics and a small
//! reverse-mode autodiff engine the networks run on.

pub mod ambisonics;
pub mod autodiff;
pub mod dsp;
pub mod codec;
pub mod error;
pub mod masknet;
pub mod sim;

pub use error::{Error, Result};
