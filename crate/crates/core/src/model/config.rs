use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MLP non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Exact erf-based GELU (Pythia).
    #[default]
    Gelu,
    /// Tanh approximation.
    GeluTanh,
}

/// Architecture constants of a GPT-NeoX decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    /// Hidden width of the MLP block.
    pub intermediate_size: usize,
    /// Fraction of each head's dimensions that receive rotary encoding.
    pub rotary_fraction: f32,
    #[serde(default = "default_rotary_base")]
    pub rotary_base: f32,
    pub max_context: usize,
    pub parallel_residual: bool,
    pub layernorm_epsilon: f32,
    #[serde(default)]
    pub activation: Activation,
}

fn default_rotary_base() -> f32 {
    10_000.0
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_head == 0 {
            return bad(format!(
                "n_layers={}, n_heads={}, d_head={} must all be positive",
                self.n_layers, self.n_heads, self.d_head
            ));
        }
        if self.d_model != self.n_heads * self.d_head {
            return bad(format!("d_model={} is not n_heads×d_head={}×{}", self.d_model, self.n_heads, self.d_head));
        }
        if !(self.rotary_fraction > 0.0 && self.rotary_fraction <= 1.0) {
            return bad(format!("rotary_fraction={} outside (0, 1]", self.rotary_fraction));
        }
        let rot = self.rotary_dims();
        if rot == 0 || !rot.is_multiple_of(2) {
            return bad(format!("rotary dimension count {rot} must be positive and even"));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size={} must be at least 2", self.vocab_size));
        }
        if self.intermediate_size == 0 || self.max_context == 0 {
            return bad(format!(
                "intermediate_size={} and max_context={} must be positive",
                self.intermediate_size, self.max_context
            ));
        }
        if !(self.layernorm_epsilon.is_finite()
            && self.layernorm_epsilon > 0.0
            && self.rotary_base.is_finite()
            && self.rotary_base > 0.0)
        {
            return bad(format!(
                "layernorm_epsilon={} and rotary_base={} must be positive",
                self.layernorm_epsilon, self.rotary_base
            ));
        }
        Ok(())
    }

    /// Number of leading dimensions per head that are rotated, truncated as
    /// GPT-NeoX does (`int(d_head * rotary_pct)`).
    pub fn rotary_dims(&self) -> usize {
        (self.d_head as f32 * self.rotary_fraction) as usize
    }

    pub fn n_head_slots(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pythia_70m() -> ModelConfig {
        ModelConfig {
            n_layers: 6,
            n_heads: 8,
            d_model: 512,
            d_head: 64,
            vocab_size: 50304,
            intermediate_size: 2048,
            rotary_fraction: 0.25,
            rotary_base: 10_000.0,
            max_context: 2048,
            parallel_residual: true,
            layernorm_epsilon: 1e-5,
            activation: Activation::Gelu,
        }
    }

    #[test]
    fn pythia_shape_is_valid() {
        let c = pythia_70m();
        c.validate().unwrap();
        assert_eq!(c.rotary_dims(), 16);
    }

    #[test]
    fn rejects_inconsistent_width() {
        let mut c = pythia_70m();
        c.d_model = 500;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_rotary_fraction() {
        let mut c = pythia_70m();
        c.rotary_fraction = 0.0;
        assert!(c.validate().is_err());
        c.rotary_fraction = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_tiny_vocab() {
        let mut c = pythia_70m();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
    }
}
