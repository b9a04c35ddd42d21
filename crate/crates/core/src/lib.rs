//! Contrastive self-supervised representation learning for environmental
//! sound: audio loading, mel patches, a reverse-mode autodiff engine, the 1D
//! CNN encoder, contrastive pretraining, CCA fusion and linear probing.

pub mod audio;
pub mod autodiff;
pub mod cca;
pub mod contrastive;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod features;
pub mod manifest;
pub mod probe;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
