//! Core library for tri-modal conversation emotion recognition: tape-based
//! autodiff, recurrent utterance encoders, similarity-weighted conversation
//! graphs with deep propagation, a kernel-based contrastive objective, a
//! two-stage sentiment/emotion classifier, and the training loop tying them
//! together.

pub mod autodiff;
pub mod classifier;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
