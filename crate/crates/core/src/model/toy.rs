//! Seeded toy GPT-NeoX used for offline fixtures and tests.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Activation;
use super::weights::LayerWeights;
use super::{ModelConfig, Weights};
use crate::math::Matrix;

const UNEMBED_GAIN: f32 = 0.1;
const BRANCH_GAIN: f32 = 0.5;

/// 2 layers, 4 heads of width 16, byte-sized vocabulary.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 64,
        d_head: 16,
        vocab_size: 256,
        intermediate_size: 256,
        rotary_fraction: 0.25,
        rotary_base: 10_000.0,
        max_context: 1024,
        parallel_residual: true,
        layernorm_epsilon: 1e-5,
        activation: Activation::Gelu,
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Standard normal via Box-Muller.
    fn normal(&mut self) -> f32 {
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)) as f32
    }

    fn vec(&mut self, n: usize, std: f32) -> Vec<f32> {
        (0..n).map(|_| self.normal() * std).collect()
    }

    fn around(&mut self, n: usize, centre: f32, std: f32) -> Vec<f32> {
        (0..n).map(|_| centre + self.normal() * std).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize, std: f32) -> Matrix {
        Matrix::from_vec(rows, cols, self.vec(rows * cols, std))
    }
}

/// Deterministic pseudo-random weights for [`toy_config`]. The same seed
/// always yields the same weights (ChaCha8 stream, Box-Muller normals).
pub fn build_toy_weights(seed: u64) -> (ModelConfig, Weights) {
    let cfg = toy_config();
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = cfg.d_model;
    let ff = cfg.intermediate_size;
    let std_in = 1.0 / libm::sqrtf(d as f32);
    let std_ff = 1.0 / libm::sqrtf(ff as f32);

    let embed = init.matrix(cfg.vocab_size, d, 1.0);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            attn_norm_w: init.around(d, 1.0, 0.1),
            attn_norm_b: init.vec(d, 0.02),
            mlp_norm_w: init.around(d, 1.0, 0.1),
            mlp_norm_b: init.vec(d, 0.02),
            q_w: init.matrix(d, d, 2.0 * std_in),
            q_b: init.vec(d, 0.02),
            k_w: init.matrix(d, d, 2.0 * std_in),
            k_b: init.vec(d, 0.02),
            v_w: init.matrix(d, d, std_in),
            v_b: init.vec(d, 0.02),
            out_w: init.matrix(d, d, BRANCH_GAIN * std_in),
            out_b: init.vec(d, 0.02),
            mlp_in_w: init.matrix(ff, d, std_in),
            mlp_in_b: init.vec(ff, 0.02),
            mlp_out_w: init.matrix(d, ff, BRANCH_GAIN * std_ff),
            mlp_out_b: init.vec(d, 0.02),
        })
        .collect();
    let final_norm_w = init.around(d, 1.0, 0.1);
    let final_norm_b = init.vec(d, 0.02);

    // Bigram backbone: each token points at a successor other than itself, and
    // the successor's unembedding row aligns with the token's embedding. Greedy
    // decoding then follows a random functional graph, which always ends in a
    // cycle; attention and the MLPs perturb it with context.
    let v = cfg.vocab_size;
    let mut unembed = init.matrix(v, d, 0.02);
    for w in 0..v {
        let succ = (w + 1 + init.rng.random_range(0..v - 1)) % v;
        let row = unembed.row_mut(succ);
        for (u, e) in row.iter_mut().zip(embed.row(w)) {
            *u += UNEMBED_GAIN * e;
        }
    }
    (cfg, Weights { embed, layers, final_norm_w, final_norm_b, unembed })
}
