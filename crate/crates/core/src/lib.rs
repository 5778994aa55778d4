//! Analysis core for repetition loops in GPT-NeoX style language models.
//!
//! Everything in this crate is pure computation over token ids and `f32`
//! weights; it needs `alloc` but no operating system. File formats, the
//! tokenizer, parallel orchestration and the CLI live in the `loopscope`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cycle;
pub mod dataset;
pub mod error;
pub mod lens;
pub mod math;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod rouge;
pub mod sampling;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Weights};

/// Token id. Vocabularies of the supported models fit comfortably in 32 bits.
pub type TokenId = u32;
