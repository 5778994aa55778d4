//! GPT-NeoX forward pass: batched scoring with optional per-head capture, and
//! incremental decoding over a key/value cache.

use alloc::vec;
use alloc::vec::Vec;

use super::config::Activation;
use super::{ModelConfig, Weights};
use crate::error::{Error, Result};
use crate::math::{self, dot, Matrix};
use crate::TokenId;

/// Immutable model handle.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
    inv_freq: Vec<f32>,
}

/// Per-position internals captured during [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCapture {
    n_heads: usize,
    d_model: usize,
    /// Residual update of every head, `n_layers × n_heads × d_model`.
    pub updates: Vec<f32>,
    /// Pre-attention layer-norm output of every layer, `n_layers × d_model`.
    pub norm_inputs: Vec<f32>,
    /// Whole attention-branch update (output projection with bias), `n_layers × d_model`.
    pub attn_branch: Vec<f32>,
    /// Residual stream after the last block, before the final layer norm.
    pub final_residual: Vec<f32>,
}

impl HeadCapture {
    pub fn update(&self, layer: usize, head: usize) -> &[f32] {
        let start = (layer * self.n_heads + head) * self.d_model;
        &self.updates[start..start + self.d_model]
    }

    pub fn norm_input(&self, layer: usize) -> &[f32] {
        &self.norm_inputs[layer * self.d_model..(layer + 1) * self.d_model]
    }

    pub fn attn_branch(&self, layer: usize) -> &[f32] {
        &self.attn_branch[layer * self.d_model..(layer + 1) * self.d_model]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub positions: Vec<usize>,
    /// Final logits for each entry of `positions`.
    pub logits: Vec<Vec<f32>>,
    /// Head captures for each entry of `positions`, when requested.
    pub heads: Option<Vec<HeadCapture>>,
}

/// Result of a decoding run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Newly generated tokens only.
    pub tokens: Vec<TokenId>,
    /// Prompt tokens dropped from the left to fit the context window.
    pub truncated: usize,
}

/// Key/value cache owned by one decoding run.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        let rot = config.rotary_dims();
        let inv_freq =
            (0..rot / 2).map(|i| 1.0 / libm::powf(config.rotary_base, (2 * i) as f32 / rot as f32)).collect();
        Ok(Self { config, weights, inv_freq })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelConfig, Weights) {
        (self.config, self.weights)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() > self.config.max_context {
            return Err(Error::ContextOverflow { len: tokens.len(), max: self.config.max_context });
        }
        let v = self.config.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= v) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size: v }),
            None => Ok(()),
        }
    }

    fn apply_rotary(&self, x: &mut [f32], pos: usize) {
        let dh = self.config.d_head;
        let half = self.inv_freq.len();
        for h in 0..self.config.n_heads {
            let head = &mut x[h * dh..(h + 1) * dh];
            for (i, &f) in self.inv_freq.iter().enumerate() {
                let angle = pos as f32 * f;
                let (s, c) = (libm::sinf(angle), libm::cosf(angle));
                let (a, b) = (head[i], head[i + half]);
                head[i] = a * c - b * s;
                head[i + half] = b * c + a * s;
            }
        }
    }

    /// Query, key and value of one position, rotary already applied.
    fn project_qkv(&self, layer: usize, normed: &[f32], pos: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let lw = &self.weights.layers[layer];
        let mut q = lw.q_w.matvec(normed, Some(&lw.q_b));
        let mut k = lw.k_w.matvec(normed, Some(&lw.k_b));
        let v = lw.v_w.matvec(normed, Some(&lw.v_b));
        self.apply_rotary(&mut q, pos);
        self.apply_rotary(&mut k, pos);
        (q, k, v)
    }

    /// Causal attention of `q` over the first `n_ctx` cached rows; returns the
    /// concatenated per-head outputs (before the output projection).
    fn attend(&self, q: &[f32], keys: &[f32], values: &[f32], n_ctx: usize) -> Vec<f32> {
        let d = self.config.d_model;
        let dh = self.config.d_head;
        let scale = 1.0 / libm::sqrtf(dh as f32);
        let mut z = vec![0.0f32; d];
        let mut scores = vec![0.0f32; n_ctx];
        for h in 0..self.config.n_heads {
            let span = h * dh..(h + 1) * dh;
            let qh = &q[span.clone()];
            let mut max = f32::NEG_INFINITY;
            for (s, score) in scores.iter_mut().enumerate() {
                *score = dot(qh, &keys[s * d + span.start..s * d + span.end]) * scale;
                max = max.max(*score);
            }
            let mut total = 0.0f32;
            for score in scores.iter_mut() {
                *score = libm::expf(*score - max);
                total += *score;
            }
            let zh = &mut z[span.clone()];
            for (s, &w) in scores.iter().enumerate() {
                math::axpy(w / total, &values[s * d + span.start..s * d + span.end], zh);
            }
        }
        z
    }

    fn mlp(&self, layer: usize, x: &[f32]) -> Vec<f32> {
        let lw = &self.weights.layers[layer];
        let eps = self.config.layernorm_epsilon;
        let normed = math::layer_norm(x, &lw.mlp_norm_w, &lw.mlp_norm_b, eps);
        let mut hidden = lw.mlp_in_w.matvec(&normed, Some(&lw.mlp_in_b));
        let act: fn(f32) -> f32 = match self.config.activation {
            Activation::Gelu => math::gelu,
            Activation::GeluTanh => math::gelu_tanh,
        };
        for v in &mut hidden {
            *v = act(*v);
        }
        lw.mlp_out_w.matvec(&hidden, Some(&lw.mlp_out_b))
    }

    /// Adds the attention branch `attn` and the MLP branch to the residual `x`.
    fn residual_update(&self, layer: usize, x: &mut [f32], attn: &[f32]) {
        if self.config.parallel_residual {
            let m = self.mlp(layer, x);
            for ((xi, mi), ai) in x.iter_mut().zip(&m).zip(attn) {
                *xi += mi + ai;
            }
        } else {
            for (xi, ai) in x.iter_mut().zip(attn) {
                *xi += ai;
            }
            let m = self.mlp(layer, x);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
        }
    }

    /// Final layer norm of a residual vector.
    pub fn final_norm(&self, residual: &[f32]) -> Vec<f32> {
        math::layer_norm(
            residual,
            &self.weights.final_norm_w,
            &self.weights.final_norm_b,
            self.config.layernorm_epsilon,
        )
    }

    /// Logits for an already-normalised hidden vector.
    pub fn unembed(&self, normed: &[f32]) -> Vec<f32> {
        self.weights.unembed.matvec(normed, None)
    }

    /// `unembed(final_norm(residual))`.
    pub fn logits_from_residual(&self, residual: &[f32]) -> Vec<f32> {
        self.unembed(&self.final_norm(residual))
    }

    /// Batched forward pass over `tokens`. Logits (and head captures when
    /// `capture_heads`) are returned for each entry of `positions`.
    pub fn forward(&self, tokens: &[TokenId], positions: &[usize], capture_heads: bool) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let len = tokens.len();
        if let Some(&pos) = positions.iter().find(|&&p| p >= len) {
            return Err(Error::PositionOutOfRange { pos, len });
        }
        // causal: nothing after the last requested position matters
        let len = positions.iter().max().map_or(0, |&p| p + 1);
        let tokens = &tokens[..len];
        let cfg = &self.config;
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let eps = cfg.layernorm_epsilon;

        let mut xs: Vec<Vec<f32>> = tokens.iter().map(|&t| self.weights.embed.row(t as usize).to_vec()).collect();
        let mut captures: Vec<HeadCapture> = if capture_heads {
            positions
                .iter()
                .map(|_| HeadCapture {
                    n_heads: cfg.n_heads,
                    d_model: d,
                    updates: vec![0.0; cfg.n_layers * cfg.n_heads * d],
                    norm_inputs: vec![0.0; cfg.n_layers * d],
                    attn_branch: vec![0.0; cfg.n_layers * d],
                    final_residual: Vec::new(),
                })
                .collect()
        } else {
            Vec::new()
        };

        for layer in 0..cfg.n_layers {
            let lw = &self.weights.layers[layer];
            let normed: Vec<Vec<f32>> =
                xs.iter().map(|x| math::layer_norm(x, &lw.attn_norm_w, &lw.attn_norm_b, eps)).collect();
            let mut queries = Vec::with_capacity(len);
            let mut keys = Vec::with_capacity(len * d);
            let mut values = Vec::with_capacity(len * d);
            for (pos, n) in normed.iter().enumerate() {
                let (q, k, v) = self.project_qkv(layer, n, pos);
                queries.push(q);
                keys.extend_from_slice(&k);
                values.extend_from_slice(&v);
            }
            for t in 0..len {
                let z = self.attend(&queries[t], &keys, &values, t + 1);
                let attn = lw.out_w.matvec(&z, Some(&lw.out_b));
                if capture_heads {
                    for (ci, _) in positions.iter().enumerate().filter(|(_, &p)| p == t) {
                        let cap = &mut captures[ci];
                        cap.norm_inputs[layer * d..(layer + 1) * d].copy_from_slice(&normed[t]);
                        cap.attn_branch[layer * d..(layer + 1) * d].copy_from_slice(&attn);
                        for h in 0..cfg.n_heads {
                            let start = (layer * cfg.n_heads + h) * d;
                            head_update(&lw.out_w, &z, h, dh, &mut cap.updates[start..start + d]);
                        }
                    }
                }
                self.residual_update(layer, &mut xs[t], &attn);
            }
        }

        let logits = positions.iter().map(|&p| self.logits_from_residual(&xs[p])).collect();
        let heads = if capture_heads {
            for (cap, &p) in captures.iter_mut().zip(positions) {
                cap.final_residual = xs[p].clone();
            }
            Some(captures)
        } else {
            None
        };
        Ok(ForwardTrace { positions: positions.to_vec(), logits, heads })
    }

    /// Final logits at every position of `tokens`.
    pub fn logits_all(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f32>>> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        Ok(self.forward(tokens, &positions, false)?.logits)
    }

    pub fn final_logits(&self, tokens: &[TokenId]) -> Result<Vec<f32>> {
        let last = tokens.len().saturating_sub(1);
        Ok(self.forward(tokens, &[last], false)?.logits.swap_remove(0))
    }

    /// Next-token distribution after `tokens`.
    pub fn final_distribution(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        Ok(math::softmax(&self.final_logits(tokens)?))
    }

    pub fn new_decode_state(&self) -> DecodeState {
        let n = self.config.n_layers;
        DecodeState { keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0 }
    }

    /// Feed one token through the cache; returns logits for the next token
    /// when `want_logits`.
    pub fn step(&self, state: &mut DecodeState, token: TokenId, want_logits: bool) -> Result<Option<Vec<f32>>> {
        if token as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange { id: token, vocab_size: self.config.vocab_size });
        }
        if state.len >= self.config.max_context {
            return Err(Error::ContextOverflow { len: state.len + 1, max: self.config.max_context });
        }
        let pos = state.len;
        let eps = self.config.layernorm_epsilon;
        let mut x = self.weights.embed.row(token as usize).to_vec();
        for layer in 0..self.config.n_layers {
            let lw = &self.weights.layers[layer];
            let normed = math::layer_norm(&x, &lw.attn_norm_w, &lw.attn_norm_b, eps);
            let (q, k, v) = self.project_qkv(layer, &normed, pos);
            state.keys[layer].extend_from_slice(&k);
            state.values[layer].extend_from_slice(&v);
            let z = self.attend(&q, &state.keys[layer], &state.values[layer], pos + 1);
            let attn = lw.out_w.matvec(&z, Some(&lw.out_b));
            self.residual_update(layer, &mut x, &attn);
        }
        state.len += 1;
        Ok(want_logits.then(|| self.logits_from_residual(&x)))
    }

    /// Autoregressive decoding with a caller-supplied token picker.
    pub fn generate_with<F>(&self, prompt: &[TokenId], max_new: usize, mut pick: F) -> Result<Generation>
    where
        F: FnMut(&[f32]) -> TokenId,
    {
        if max_new == 0 {
            return Err(Error::Argument("max_new must be at least 1".into()));
        }
        if prompt.is_empty() {
            return Err(Error::EmptyInput);
        }
        let max = self.config.max_context;
        if max_new >= max {
            return Err(Error::ContextOverflow { len: max_new + 1, max });
        }
        let truncated = prompt.len().saturating_sub(max - max_new);
        let window = &prompt[truncated..];
        self.check_tokens(window)?;

        let mut state = self.new_decode_state();
        let mut logits = None;
        for (i, &t) in window.iter().enumerate() {
            logits = self.step(&mut state, t, i + 1 == window.len())?;
        }
        let mut logits = logits.expect("window is nonempty");
        let mut tokens = Vec::with_capacity(max_new);
        for i in 0..max_new {
            let next = pick(&logits);
            tokens.push(next);
            if i + 1 < max_new {
                logits = self.step(&mut state, next, true)?.expect("logits requested");
            }
        }
        Ok(Generation { tokens, truncated })
    }

    /// Greedy decoding; ties go to the lowest token id.
    pub fn generate_greedy(&self, prompt: &[TokenId], max_new: usize) -> Result<Generation> {
        self.generate_with(prompt, max_new, |logits| math::argmax(logits) as TokenId)
    }
}

/// `out = out_w[:, h·dh..(h+1)·dh] · z[h·dh..(h+1)·dh]`.
fn head_update(out_w: &Matrix, z: &[f32], head: usize, dh: usize, out: &mut [f32]) {
    let span = head * dh..(head + 1) * dh;
    let zh = &z[span.clone()];
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&out_w.row(r)[span.clone()], zh);
    }
}
