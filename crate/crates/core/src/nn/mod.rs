//! A minimal convolutional network toolkit with hand-written backward passes.
//!
//! Layers use circular padding so learned filters share boundary semantics
//! with the circulant forward model.

mod adam;
mod checkpoint;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_network, save_network};
pub use network::{Conv3x3, ForwardCache, Gradients, Layer, Network};
