//! GPT-NeoX decoder: configuration, parameters, forward pass and decoding.

mod config;
mod forward;
pub mod toy;
mod weights;

pub use config::{Activation, ModelConfig};
pub use forward::{DecodeState, ForwardTrace, Generation, HeadCapture, Model};
pub use weights::{expected_tensors, names, LayerWeights, NamedTensor, Weights};

/// Seeded toy model (2 layers, 4 heads, `d_model` 64, 256-token vocabulary).
pub fn build_toy_model(seed: u64) -> Model {
    let (cfg, w) = toy::build_toy_weights(seed);
    Model::new(cfg, w).expect("toy weights match toy config")
}
