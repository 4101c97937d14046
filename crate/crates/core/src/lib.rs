//! Wide-then-narrow ("WIN") training for deep thin mean-field networks.
//!
//! A thin network is trained by first training a wider copy, initializing
//! the thin network from it layer by layer (neuron subsampling, or imitation
//! through inserted linear pairs), fine-tuning, and finally folding the
//! linear pairs back into the neuron weights. The [`metrics`] module
//! measures how far the result is from the wide network and checks the
//! layer-by-layer error decomposition behind that comparison.

pub mod data;
pub mod error;
pub mod io;
pub mod job;
pub mod merge;
pub mod metrics;
pub mod net;
pub mod par;
pub mod seed;
pub mod sweep;
pub mod train;
pub mod win;

pub use error::{Error, Result};
pub use net::{Activation, Architecture, Block, LinearMap, MeanFieldLayer, Network, NeuronParams};
