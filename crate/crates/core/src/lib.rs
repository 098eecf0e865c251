//! Desk-scale federated-learning privacy bench.
//!
//! The crate trains a synthetic acoustic-model stand-in, produces per-speaker
//! personalized models by fine-tuning, and infers speaker identity from the
//! models alone via two attacks evaluated with speaker-verification EER:
//!
//! - a statistical attack comparing mean/std footprints of hidden-layer
//!   activation deltas on a shared indicator dataset, and
//! - a learned attack training an x-vector-style embedding extractor on those
//!   delta sequences.
//!
//! Everything is deterministic given one master seed.

pub mod asv;
pub mod attack;
pub mod config;
pub mod error;
pub mod fl;
pub mod io;
pub mod mat;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod seeds;

pub use error::{Error, Result};
