//! Repetition-loop analysis for GPT-NeoX language models.
//!
//! The numeric work lives in [`loopscope_core`]; this crate adds file
//! formats, the tokenizer, parallel drivers, figures and the command line.

pub mod archive;
pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod pipeline;
pub mod plots;
pub mod report;
pub mod tables;
pub mod tokenizer;

pub use error::{Error, Result};
pub use loopscope_core as core;
