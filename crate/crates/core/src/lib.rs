//! Relevance-driven compression of dense classifiers.
//!
//! The pipeline trains a small ReLU network, scores every hidden neuron with
//! layer-wise relevance propagation (or a baseline criterion), removes the
//! neurons whose score is not positive, splits the survivors of each layer at
//! their median score into high- and low-precision groups, quantizes each
//! neuron's incoming weights at its assigned bit-width, and accounts the
//! resulting model size byte for byte.
//!
//! Batch loops (scoring, evaluation, quantization) run through [`exec::Exec`],
//! which uses rayon when the `parallel` feature is enabled and falls back to a
//! plain sequential loop otherwise. Both modes produce bit-identical results.

pub mod compress;
pub mod criteria;
pub mod data;
pub mod error;
pub mod exec;
pub mod format;
pub mod nn;
pub mod pipeline;
pub mod relevance;

pub use error::{Error, Result};
