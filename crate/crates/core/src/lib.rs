//! Contrastive-learning laboratory: synthetic data and augmentation channels,
//! small encoders trained with InfoNCE, and the statistics used to check how
//! Gaussian the learned embeddings become.

pub mod encoder;
pub mod error;
pub mod gaussdiag;
pub mod hgr;
pub mod io;
pub mod objective;
pub mod registry;
pub mod rng;
pub mod spherestats;
pub mod stats;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
