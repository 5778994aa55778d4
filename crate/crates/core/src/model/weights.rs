//! Parameter storage and the GPT-NeoX tensor naming scheme.
//!
//! Checkpoints store the fused `query_key_value` projection with rows grouped
//! per head as `[q_h; k_h; v_h]`. It is split into separate head-major Q, K
//! and V matrices on import and re-fused on export.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::math::Matrix;

/// A named tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm_w: Vec<f32>,
    pub attn_norm_b: Vec<f32>,
    pub mlp_norm_w: Vec<f32>,
    pub mlp_norm_b: Vec<f32>,
    pub q_w: Matrix,
    pub q_b: Vec<f32>,
    pub k_w: Matrix,
    pub k_b: Vec<f32>,
    pub v_w: Matrix,
    pub v_b: Vec<f32>,
    /// Attention output projection, `d_model × d_model`; columns
    /// `h·d_head..(h+1)·d_head` belong to head `h`.
    pub out_w: Matrix,
    pub out_b: Vec<f32>,
    pub mlp_in_w: Matrix,
    pub mlp_in_b: Vec<f32>,
    pub mlp_out_w: Matrix,
    pub mlp_out_b: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// Token embedding, `vocab_size × d_model`.
    pub embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm_w: Vec<f32>,
    pub final_norm_b: Vec<f32>,
    /// Unembedding stored one row per vocabulary entry (`vocab_size × d_model`),
    /// i.e. the transpose of `W_u`.
    pub unembed: Matrix,
}

pub mod names {
    use alloc::format;
    use alloc::string::String;

    pub const EMBED: &str = "gpt_neox.embed_in.weight";
    pub const FINAL_NORM_W: &str = "gpt_neox.final_layer_norm.weight";
    pub const FINAL_NORM_B: &str = "gpt_neox.final_layer_norm.bias";
    pub const UNEMBED: &str = "embed_out.weight";

    pub fn layer(l: usize, suffix: &str) -> String {
        format!("gpt_neox.layers.{l}.{suffix}")
    }
}

const LAYER_SUFFIXES: [&str; 12] = [
    "input_layernorm.weight",
    "input_layernorm.bias",
    "post_attention_layernorm.weight",
    "post_attention_layernorm.bias",
    "attention.query_key_value.weight",
    "attention.query_key_value.bias",
    "attention.dense.weight",
    "attention.dense.bias",
    "mlp.dense_h_to_4h.weight",
    "mlp.dense_h_to_4h.bias",
    "mlp.dense_4h_to_h.weight",
    "mlp.dense_4h_to_h.bias",
];

/// Expected shape of every tensor a checkpoint must provide.
pub fn expected_tensors(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let ff = cfg.intermediate_size;
    let mut out = vec![(String::from(names::EMBED), vec![cfg.vocab_size, d])];
    for l in 0..cfg.n_layers {
        let shapes: [Vec<usize>; 12] = [
            vec![d],
            vec![d],
            vec![d],
            vec![d],
            vec![3 * d, d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![ff, d],
            vec![ff],
            vec![d, ff],
            vec![d],
        ];
        for (suffix, shape) in LAYER_SUFFIXES.iter().zip(shapes) {
            out.push((names::layer(l, suffix), shape));
        }
    }
    out.push((String::from(names::FINAL_NORM_W), vec![d]));
    out.push((String::from(names::FINAL_NORM_B), vec![d]));
    out.push((String::from(names::UNEMBED), vec![cfg.vocab_size, d]));
    out
}

impl Weights {
    /// Assemble weights from a tensor lookup. `fetch` returns `(shape, data)`
    /// for a name, or `None` when the archive lacks it.
    pub fn from_tensors<F>(cfg: &ModelConfig, mut fetch: F) -> Result<Self>
    where
        F: FnMut(&str) -> Option<(Vec<usize>, Vec<f32>)>,
    {
        cfg.validate()?;
        let mut take = |name: &str, expected: &[usize]| -> Result<Vec<f32>> {
            let (shape, data) = fetch(name).ok_or_else(|| Error::MissingTensor(name.into()))?;
            if shape != expected {
                return Err(Error::ShapeMismatch { name: name.into(), expected: expected.to_vec(), actual: shape });
            }
            if data.len() != expected.iter().product::<usize>() {
                return Err(Error::ShapeMismatch {
                    name: name.into(),
                    expected: expected.to_vec(),
                    actual: vec![data.len()],
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
            Ok(data)
        };

        let d = cfg.d_model;
        let dh = cfg.d_head;
        let ff = cfg.intermediate_size;
        let embed = Matrix::from_vec(cfg.vocab_size, d, take(names::EMBED, &[cfg.vocab_size, d])?);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let n = |s: &str| names::layer(l, s);
            let attn_norm_w = take(&n("input_layernorm.weight"), &[d])?;
            let attn_norm_b = take(&n("input_layernorm.bias"), &[d])?;
            let mlp_norm_w = take(&n("post_attention_layernorm.weight"), &[d])?;
            let mlp_norm_b = take(&n("post_attention_layernorm.bias"), &[d])?;
            let qkv_w = take(&n("attention.query_key_value.weight"), &[3 * d, d])?;
            let qkv_b = take(&n("attention.query_key_value.bias"), &[3 * d])?;

            let mut q_w = Matrix::zeros(d, d);
            let mut k_w = Matrix::zeros(d, d);
            let mut v_w = Matrix::zeros(d, d);
            let mut q_b = vec![0.0; d];
            let mut k_b = vec![0.0; d];
            let mut v_b = vec![0.0; d];
            for h in 0..cfg.n_heads {
                for i in 0..dh {
                    let dst = h * dh + i;
                    for (part, (w, b)) in
                        [(&mut q_w, &mut q_b), (&mut k_w, &mut k_b), (&mut v_w, &mut v_b)].into_iter().enumerate()
                    {
                        let src = h * 3 * dh + part * dh + i;
                        w.row_mut(dst).copy_from_slice(&qkv_w[src * d..(src + 1) * d]);
                        b[dst] = qkv_b[src];
                    }
                }
            }

            layers.push(LayerWeights {
                attn_norm_w,
                attn_norm_b,
                mlp_norm_w,
                mlp_norm_b,
                q_w,
                q_b,
                k_w,
                k_b,
                v_w,
                v_b,
                out_w: Matrix::from_vec(d, d, take(&n("attention.dense.weight"), &[d, d])?),
                out_b: take(&n("attention.dense.bias"), &[d])?,
                mlp_in_w: Matrix::from_vec(ff, d, take(&n("mlp.dense_h_to_4h.weight"), &[ff, d])?),
                mlp_in_b: take(&n("mlp.dense_h_to_4h.bias"), &[ff])?,
                mlp_out_w: Matrix::from_vec(d, ff, take(&n("mlp.dense_4h_to_h.weight"), &[d, ff])?),
                mlp_out_b: take(&n("mlp.dense_4h_to_h.bias"), &[d])?,
            });
        }
        let final_norm_w = take(names::FINAL_NORM_W, &[d])?;
        let final_norm_b = take(names::FINAL_NORM_B, &[d])?;
        let unembed = Matrix::from_vec(cfg.vocab_size, d, take(names::UNEMBED, &[cfg.vocab_size, d])?);
        Ok(Self { embed, layers, final_norm_w, final_norm_b, unembed })
    }

    /// Export in checkpoint layout, in the order of [`expected_tensors`].
    pub fn to_tensors(&self, cfg: &ModelConfig) -> Vec<NamedTensor> {
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: Vec<f32>| {
            out.push(NamedTensor { name, shape, data });
        };
        push(names::EMBED.into(), vec![cfg.vocab_size, d], self.embed.data.clone());
        for (l, lw) in self.layers.iter().enumerate() {
            let n = |s: &str| names::layer(l, s);
            let mut qkv_w = vec![0.0f32; 3 * d * d];
            let mut qkv_b = vec![0.0f32; 3 * d];
            for h in 0..cfg.n_heads {
                for i in 0..dh {
                    let src = h * dh + i;
                    for (part, (w, b)) in
                        [(&lw.q_w, &lw.q_b), (&lw.k_w, &lw.k_b), (&lw.v_w, &lw.v_b)].into_iter().enumerate()
                    {
                        let dst = h * 3 * dh + part * dh + i;
                        qkv_w[dst * d..(dst + 1) * d].copy_from_slice(w.row(src));
                        qkv_b[dst] = b[src];
                    }
                }
            }
            push(n("input_layernorm.weight"), vec![d], lw.attn_norm_w.clone());
            push(n("input_layernorm.bias"), vec![d], lw.attn_norm_b.clone());
            push(n("post_attention_layernorm.weight"), vec![d], lw.mlp_norm_w.clone());
            push(n("post_attention_layernorm.bias"), vec![d], lw.mlp_norm_b.clone());
            push(n("attention.query_key_value.weight"), vec![3 * d, d], qkv_w);
            push(n("attention.query_key_value.bias"), vec![3 * d], qkv_b);
            push(n("attention.dense.weight"), vec![d, d], lw.out_w.data.clone());
            push(n("attention.dense.bias"), vec![d], lw.out_b.clone());
            push(n("mlp.dense_h_to_4h.weight"), lw.mlp_in_w.shape().to_vec(), lw.mlp_in_w.data.clone());
            push(n("mlp.dense_h_to_4h.bias"), vec![lw.mlp_in_b.len()], lw.mlp_in_b.clone());
            push(n("mlp.dense_4h_to_h.weight"), lw.mlp_out_w.shape().to_vec(), lw.mlp_out_w.data.clone());
            push(n("mlp.dense_4h_to_h.bias"), vec![d], lw.mlp_out_b.clone());
        }
        push(names::FINAL_NORM_W.into(), vec![d], self.final_norm_w.clone());
        push(names::FINAL_NORM_B.into(), vec![d], self.final_norm_b.clone());
        push(names::UNEMBED.into(), vec![cfg.vocab_size, d], self.unembed.data.clone());
        out
    }

    /// Re-check shapes and finiteness against `cfg` without copying.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Config(format!(
                "weights hold {} layers, config expects {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        let d = cfg.d_model;
        let ff = cfg.intermediate_size;
        let check = |name: String, shape: &[usize], expected: &[usize], data: &[f32]| -> Result<()> {
            if shape != expected || data.len() != expected.iter().product::<usize>() {
                return Err(Error::ShapeMismatch { name, expected: expected.to_vec(), actual: shape.to_vec() });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            Ok(())
        };
        let mat = |name: String, m: &Matrix, expected: &[usize]| check(name, &m.shape(), expected, &m.data);
        let vector = |name: String, v: &[f32], n: usize| check(name, &[v.len()], &[n], v);

        mat(names::EMBED.into(), &self.embed, &[cfg.vocab_size, d])?;
        for (l, lw) in self.layers.iter().enumerate() {
            let n = |s: &str| names::layer(l, s);
            vector(n("input_layernorm.weight"), &lw.attn_norm_w, d)?;
            vector(n("input_layernorm.bias"), &lw.attn_norm_b, d)?;
            vector(n("post_attention_layernorm.weight"), &lw.mlp_norm_w, d)?;
            vector(n("post_attention_layernorm.bias"), &lw.mlp_norm_b, d)?;
            for (w, b) in [(&lw.q_w, &lw.q_b), (&lw.k_w, &lw.k_b), (&lw.v_w, &lw.v_b)] {
                mat(n("attention.query_key_value.weight"), w, &[d, d])?;
                vector(n("attention.query_key_value.bias"), b, d)?;
            }
            mat(n("attention.dense.weight"), &lw.out_w, &[d, d])?;
            vector(n("attention.dense.bias"), &lw.out_b, d)?;
            mat(n("mlp.dense_h_to_4h.weight"), &lw.mlp_in_w, &[ff, d])?;
            vector(n("mlp.dense_h_to_4h.bias"), &lw.mlp_in_b, ff)?;
            mat(n("mlp.dense_4h_to_h.weight"), &lw.mlp_out_w, &[d, ff])?;
            vector(n("mlp.dense_4h_to_h.bias"), &lw.mlp_out_b, d)?;
        }
        vector(names::FINAL_NORM_W.into(), &self.final_norm_w, d)?;
        vector(names::FINAL_NORM_B.into(), &self.final_norm_b, d)?;
        mat(names::UNEMBED.into(), &self.unembed, &[cfg.vocab_size, d])?;
        Ok(())
    }
}
