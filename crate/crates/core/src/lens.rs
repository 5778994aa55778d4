//! Affine head lenses: per-head translators from a head's residual update into
//! the pre-unembedding space, their training, and contrastive attribution.
//!
//! A lens maps a head update `a` to `z = W·a + b`; its distribution is
//! `softmax(W_u · final_norm(z))`. Training minimises `KL(p_final ‖ p_lens)`
//! at the last position of each training sequence with plain minibatch SGD.
//! Gradients are analytic: `∂KL/∂logits = p_lens − p_final`, pulled back
//! through the unembedding and the final layer norm.
//!
//! The contrast of a head at a position is `p_lens[ctok] − p_lens[ntok]`,
//! where `ctok` continues the cycle and `ntok` is the model's most likely
//! other token. It lies in `[−1, 1]` and is 0 for a uniform lens distribution.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{plan_cycles, Condition, PromptPair};
use crate::error::{Error, Result};
use crate::math::{self, axpy, Matrix};
use crate::model::{HeadCapture, Model};
use crate::TokenId;

/// Parameter tying between heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LensSharing {
    /// One `W` per layer instead of one per head.
    pub per_layer: bool,
    /// One bias for every lens.
    pub global_bias: bool,
}

/// Trained translator of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLens {
    pub layer: usize,
    pub head: usize,
    /// `d_model × d_model`.
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub steps: usize,
    pub final_kl: f64,
}

impl HeadLens {
    pub fn identity(layer: usize, head: usize, d_model: usize) -> Self {
        Self { layer, head, weight: Matrix::identity(d_model), bias: vec![0.0; d_model], steps: 0, final_kl: f64::NAN }
    }

    /// `W·a + b`.
    pub fn affine(&self, a: &[f32]) -> Result<Vec<f32>> {
        if a.len() != self.weight.cols {
            return Err(Error::DimensionMismatch { expected: self.weight.cols, actual: a.len() });
        }
        Ok(self.weight.matvec(a, Some(&self.bias)))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// One lens per `(layer, head)`, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LensSet {
    pub n_layers: usize,
    pub n_heads: usize,
    pub sharing: LensSharing,
    pub lenses: Vec<HeadLens>,
}

impl LensSet {
    pub fn identity(model: &Model) -> Self {
        let c = model.config();
        let lenses = (0..c.n_layers)
            .flat_map(|l| (0..c.n_heads).map(move |h| (l, h)))
            .map(|(l, h)| HeadLens::identity(l, h, c.d_model))
            .collect();
        Self { n_layers: c.n_layers, n_heads: c.n_heads, sharing: LensSharing::default(), lenses }
    }

    pub fn get(&self, layer: usize, head: usize) -> Result<&HeadLens> {
        self.lenses
            .get(layer * self.n_heads + head)
            .filter(|l| l.layer == layer && l.head == head && layer < self.n_layers && head < self.n_heads)
            .ok_or_else(|| Error::Argument(alloc::format!("no lens for layer {layer} head {head}")))
    }

    /// Error unless the set covers every head of `model`.
    pub fn check_complete(&self, model: &Model) -> Result<()> {
        let c = model.config();
        if self.n_layers != c.n_layers || self.n_heads != c.n_heads || self.lenses.len() != c.n_head_slots() {
            return Err(Error::Argument(alloc::format!(
                "lens set covers {}×{} heads, model has {}×{}",
                self.n_layers,
                self.n_heads,
                c.n_layers,
                c.n_heads
            )));
        }
        for l in 0..c.n_layers {
            for h in 0..c.n_heads {
                let lens = self.get(l, h)?;
                if lens.weight.shape() != [c.d_model, c.d_model] || lens.bias.len() != c.d_model {
                    return Err(Error::DimensionMismatch { expected: c.d_model, actual: lens.bias.len() });
                }
            }
        }
        Ok(())
    }
}

/// Pseudo-logits of a head update: `unembed(final_norm(W·a + b))`.
pub fn translate(model: &Model, lens: &HeadLens, a: &[f32]) -> Result<Vec<f32>> {
    if lens.weight.rows != model.config().d_model {
        return Err(Error::DimensionMismatch { expected: model.config().d_model, actual: lens.weight.rows });
    }
    Ok(model.logits_from_residual(&lens.affine(a)?))
}

/// `softmax(logits)[ctok] − softmax(logits)[ntok]`.
pub fn contrast_from_logits(logits: &[f32], ctok: TokenId, ntok: TokenId) -> Result<f64> {
    if ctok == ntok {
        return Err(Error::SameToken(ctok));
    }
    for t in [ctok, ntok] {
        if t as usize >= logits.len() {
            return Err(Error::TokenOutOfRange { id: t, vocab_size: logits.len() });
        }
    }
    let lse = math::log_sum_exp(logits);
    let p = |t: TokenId| libm::exp(logits[t as usize] as f64 - lse);
    Ok(p(ctok) - p(ntok))
}

pub fn contrast(model: &Model, lens: &HeadLens, a: &[f32], ctok: TokenId, ntok: TokenId) -> Result<f64> {
    if ctok == ntok {
        return Err(Error::SameToken(ctok));
    }
    contrast_from_logits(&translate(model, lens, a)?, ctok, ntok)
}

/// Highest-logit token other than `ctok`; ties go to the lowest id.
pub fn interrupting_token(logits: &[f32], ctok: TokenId) -> TokenId {
    let mut best: Option<usize> = None;
    for (i, &v) in logits.iter().enumerate() {
        if i == ctok as usize {
            continue;
        }
        if best.is_none_or(|b| v > logits[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0) as TokenId
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensTrainingConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; when set, epochs repeat until it is reached.
    pub max_steps: Option<usize>,
    pub sharing: LensSharing,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for LensTrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1,
            max_steps: None,
            sharing: LensSharing::default(),
            seed: 0,
        }
    }
}

/// Final-position head updates of one sequence and the model's own
/// next-token distribution there.
#[derive(Debug, Clone, PartialEq)]
pub struct LensExample {
    pub heads: HeadCapture,
    pub target: Vec<f64>,
}

pub fn lens_example(model: &Model, tokens: &[TokenId]) -> Result<LensExample> {
    let last = tokens.len().saturating_sub(1);
    let mut trace = model.forward(tokens, &[last], true)?;
    let heads = trace.heads.take().and_then(|mut h| h.pop()).ok_or(Error::EmptyInput)?;
    Ok(LensExample { heads, target: math::softmax(&trace.logits[0]) })
}

/// KL of one lens on one update, and `∂KL/∂z` for `z = W·a + b`.
pub fn kl_and_grad(model: &Model, weight: &Matrix, bias: &[f32], a: &[f32], target: &[f64]) -> (f64, Vec<f32>) {
    let w = model.weights();
    let eps = model.config().layernorm_epsilon;
    let z = weight.matvec(a, Some(bias));
    let (mean, inv_std) = math::norm_stats(&z, eps);
    let zhat: Vec<f32> = z.iter().map(|&v| ((v as f64 - mean) * inv_std) as f32).collect();
    let h: Vec<f32> =
        zhat.iter().zip(w.final_norm_w.iter().zip(&w.final_norm_b)).map(|(&x, (&g, &b))| x * g + b).collect();
    let logits = model.unembed(&h);
    let kl = math::kl_to_logits(target, &logits);
    let q = math::softmax(&logits);
    let g_logits: Vec<f32> = q.iter().zip(target).map(|(qi, pi)| (qi - pi) as f32).collect();
    let g_h = w.unembed.matvec_t(&g_logits);
    let g_hat: Vec<f64> = g_h.iter().zip(&w.final_norm_w).map(|(&g, &gamma)| (g * gamma) as f64).collect();
    let n = g_hat.len() as f64;
    let mean_g = g_hat.iter().sum::<f64>() / n;
    let mean_gx = g_hat.iter().zip(&zhat).map(|(&g, &x)| g * x as f64).sum::<f64>() / n;
    let g_z = g_hat.iter().zip(&zhat).map(|(&g, &x)| (inv_std * (g - mean_g - x as f64 * mean_gx)) as f32).collect();
    (kl, g_z)
}

/// Summed gradient of one parameter slot over a batch.
#[derive(Debug, Clone)]
pub struct SlotGradient {
    pub slot: usize,
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub count: usize,
    /// `(head index, summed KL)` for every head in the slot.
    pub head_losses: Vec<(usize, f64)>,
}

/// SGD over lens parameters with optional tying.
#[derive(Debug, Clone)]
pub struct LensTrainer {
    n_layers: usize,
    n_heads: usize,
    d_model: usize,
    sharing: LensSharing,
    learning_rate: f32,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f32>>,
    steps: usize,
    /// Mean KL over all heads, one entry per step (before the update).
    pub history: Vec<f64>,
    /// Per-head mean KL of every step.
    pub head_history: Vec<Vec<f64>>,
}

impl LensTrainer {
    /// Identity weights, zero biases.
    pub fn new(model: &Model, config: &LensTrainingConfig) -> Self {
        let c = model.config();
        let slots = if config.sharing.per_layer { c.n_layers } else { c.n_head_slots() };
        let bias_slots = if config.sharing.global_bias { 1 } else { slots };
        Self {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            sharing: config.sharing,
            learning_rate: config.learning_rate,
            weights: vec![Matrix::identity(c.d_model); slots],
            biases: vec![vec![0.0; c.d_model]; bias_slots],
            steps: 0,
            history: Vec::new(),
            head_history: Vec::new(),
        }
    }

    /// Overwrite the parameters of one slot (the shared bias when
    /// `global_bias` is set).
    pub fn set_slot(&mut self, slot: usize, weight: Matrix, bias: Vec<f32>) -> Result<()> {
        let d = self.d_model;
        if slot >= self.weights.len() {
            return Err(Error::Argument(alloc::format!("slot {slot} out of range")));
        }
        if weight.shape() != [d, d] || bias.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: bias.len() });
        }
        self.weights[slot] = weight;
        let b = if self.sharing.global_bias { 0 } else { slot };
        self.biases[b] = bias;
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        self.weights.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn heads_of(&self, slot: usize) -> core::ops::Range<usize> {
        if self.sharing.per_layer {
            slot * self.n_heads..(slot + 1) * self.n_heads
        } else {
            slot..slot + 1
        }
    }

    fn slot_of(&self, head_index: usize) -> usize {
        if self.sharing.per_layer {
            head_index / self.n_heads
        } else {
            head_index
        }
    }

    fn bias_of(&self, slot: usize) -> &[f32] {
        if self.sharing.global_bias {
            &self.biases[0]
        } else {
            &self.biases[slot]
        }
    }

    /// Current lens of a head (flat index `layer·n_heads + head`).
    pub fn lens(&self, head_index: usize) -> HeadLens {
        let slot = self.slot_of(head_index);
        HeadLens {
            layer: head_index / self.n_heads,
            head: head_index % self.n_heads,
            weight: self.weights[slot].clone(),
            bias: self.bias_of(slot).to_vec(),
            steps: self.steps,
            final_kl: f64::NAN,
        }
    }

    /// Gradient of one slot over `batch`; independent of other slots.
    pub fn slot_gradient(&self, model: &Model, batch: &[LensExample], slot: usize) -> SlotGradient {
        let d = self.d_model;
        let mut grad =
            SlotGradient { slot, weight: Matrix::zeros(d, d), bias: vec![0.0; d], count: 0, head_losses: Vec::new() };
        let weight = &self.weights[slot];
        let bias = self.bias_of(slot);
        for hi in self.heads_of(slot) {
            let (layer, head) = (hi / self.n_heads, hi % self.n_heads);
            let mut loss = 0.0;
            for ex in batch {
                let a = ex.heads.update(layer, head);
                let (kl, g_z) = kl_and_grad(model, weight, bias, a, &ex.target);
                loss += kl;
                for (r, &g) in g_z.iter().enumerate() {
                    axpy(g, a, grad.weight.row_mut(r));
                }
                axpy(1.0, &g_z, &mut grad.bias);
                grad.count += 1;
            }
            grad.head_losses.push((hi, loss));
        }
        grad
    }

    /// Apply one SGD update from the gradients of every slot (any order).
    pub fn apply(&mut self, mut grads: Vec<SlotGradient>) -> Result<f64> {
        grads.sort_by_key(|g| g.slot);
        let batch = grads.iter().map(|g| g.count).max().unwrap_or(0) / self.heads_of(0).len().max(1);
        let mut head_losses = vec![0.0f64; self.n_layers * self.n_heads];
        for g in &grads {
            for &(hi, loss) in &g.head_losses {
                head_losses[hi] = loss / batch.max(1) as f64;
            }
        }
        let mean = head_losses.iter().sum::<f64>() / head_losses.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.steps });
        }
        let lr = self.learning_rate;
        for g in &grads {
            let scale = lr / g.count.max(1) as f32;
            axpy(-scale, &g.weight.data, &mut self.weights[g.slot].data);
        }
        if self.sharing.global_bias {
            let total: usize = grads.iter().map(|g| g.count).sum();
            let scale = lr / total.max(1) as f32;
            for g in &grads {
                axpy(-scale, &g.bias, &mut self.biases[0]);
            }
        } else {
            for g in &grads {
                let scale = lr / g.count.max(1) as f32;
                axpy(-scale, &g.bias, &mut self.biases[g.slot]);
            }
        }
        self.steps += 1;
        self.history.push(mean);
        self.head_history.push(head_losses);
        Ok(mean)
    }

    /// One sequential SGD step; returns the batch mean KL before the update.
    pub fn step(&mut self, model: &Model, batch: &[LensExample]) -> Result<f64> {
        let grads = (0..self.slot_count()).map(|s| self.slot_gradient(model, batch, s)).collect();
        self.apply(grads)
    }

    /// Mean KL of every head over `examples`, layer-major.
    pub fn evaluate(&self, model: &Model, examples: &[LensExample]) -> Vec<f64> {
        evaluate_heads(model, examples, |hi| self.lens(hi))
    }

    /// Freeze into a [`LensSet`]; `final_kl` is the mean over the last
    /// `window` steps of each head.
    pub fn finish(self, window: usize) -> LensSet {
        let total = self.n_layers * self.n_heads;
        let tail = &self.head_history[self.head_history.len().saturating_sub(window.max(1))..];
        let lenses = (0..total)
            .map(|hi| {
                let mut lens = self.lens(hi);
                lens.final_kl = if tail.is_empty() {
                    f64::NAN
                } else {
                    tail.iter().map(|row| row[hi]).sum::<f64>() / tail.len() as f64
                };
                lens
            })
            .collect();
        LensSet { n_layers: self.n_layers, n_heads: self.n_heads, sharing: self.sharing, lenses }
    }
}

fn evaluate_heads(model: &Model, examples: &[LensExample], lens_of: impl Fn(usize) -> HeadLens) -> Vec<f64> {
    let c = model.config();
    (0..c.n_head_slots())
        .map(|hi| {
            let lens = lens_of(hi);
            let total: f64 = examples
                .iter()
                .map(|ex| {
                    let logits = model.logits_from_residual(
                        &lens.weight.matvec(ex.heads.update(lens.layer, lens.head), Some(&lens.bias)),
                    );
                    math::kl_to_logits(&ex.target, &logits)
                })
                .sum();
            total / examples.len().max(1) as f64
        })
        .collect()
}

/// Mean KL of every head of a trained set over `examples`, layer-major.
pub fn evaluate_lenses(model: &Model, lenses: &LensSet, examples: &[LensExample]) -> Vec<f64> {
    evaluate_heads(model, examples, |hi| lenses.lenses[hi].clone())
}

/// Batches of sequence indices in training order: a fresh seeded shuffle per
/// epoch, consecutive chunks of `batch_size`, trailing partial batch kept.
pub fn batch_schedule(n_sequences: usize, config: &LensTrainingConfig) -> Result<Vec<Vec<usize>>> {
    if config.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    if n_sequences < config.batch_size {
        return Err(Error::Argument(alloc::format!(
            "training corpus of {n_sequences} sequences is smaller than one batch of {}",
            config.batch_size
        )));
    }
    let mut out = Vec::new();
    let mut epoch = 0u64;
    loop {
        let mut order: Vec<usize> = (0..n_sequences).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| out.len() >= m) {
                return Ok(out);
            }
            out.push(chunk.to_vec());
        }
        epoch += 1;
        match config.max_steps {
            Some(m) if out.len() < m => continue,
            Some(_) => return Ok(out),
            None if epoch as usize >= config.epochs.max(1) => return Ok(out),
            None => continue,
        }
    }
}

/// Examples are kept between epochs only when they are revisited and the
/// whole set fits in this many bytes.
pub const EXAMPLE_CACHE_BYTES: usize = 256 << 20;

/// Memoises [`lens_example`] across epochs when it pays off.
#[derive(Debug)]
pub struct ExampleCache {
    slots: Option<Vec<Option<LensExample>>>,
}

impl ExampleCache {
    /// `uses` is the number of example lookups the schedule will make.
    pub fn new(model: &Model, n_sequences: usize, uses: usize) -> Self {
        let c = model.config();
        let per_example = (c.n_head_slots() + c.n_layers * 2 + 1) * c.d_model * 4 + c.vocab_size * 8;
        let keep = uses > n_sequences && n_sequences.saturating_mul(per_example) <= EXAMPLE_CACHE_BYTES;
        Self { slots: keep.then(|| vec![None; n_sequences]) }
    }

    pub fn is_caching(&self) -> bool {
        self.slots.is_some()
    }

    pub fn get(&mut self, model: &Model, index: usize, tokens: &[TokenId]) -> Result<LensExample> {
        match &mut self.slots {
            None => lens_example(model, tokens),
            Some(slots) => {
                if slots[index].is_none() {
                    slots[index] = Some(lens_example(model, tokens)?);
                }
                Ok(slots[index].clone().expect("filled above"))
            }
        }
    }
}

/// Sequential trainer over token sequences (final position of each).
pub fn train_lenses(
    model: &Model,
    sequences: &[Vec<TokenId>],
    config: &LensTrainingConfig,
) -> Result<(LensSet, Vec<f64>)> {
    let schedule = batch_schedule(sequences.len(), config)?;
    let mut trainer = LensTrainer::new(model, config);
    let mut cache = ExampleCache::new(model, sequences.len(), schedule.len() * config.batch_size);
    for batch_idx in &schedule {
        let batch = batch_idx.iter().map(|&i| cache.get(model, i, &sequences[i])).collect::<Result<Vec<_>>>()?;
        trainer.step(model, &batch)?;
    }
    let history = trainer.history.clone();
    Ok((trainer.finish(100), history))
}

// ---------------------------------------------------------------------------
// Attribution
// ---------------------------------------------------------------------------

/// Mean contrast of every head in every cycle of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContrast {
    pub pair_id: String,
    pub condition: Condition,
    /// `[head index][cycle]`, layer-major heads; `None` when a cycle has no
    /// scored tokens.
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn pair_contrasts(
    model: &Model,
    lenses: &LensSet,
    pair: &PromptPair,
    condition: Condition,
    k_cycles: usize,
) -> Result<PairContrast> {
    lenses.check_complete(model)?;
    let plan = plan_cycles(model, pair, condition, k_cycles)?;
    let positions = plan.positions();
    let trace = model.forward(&plan.tokens, &positions, true)?;
    let heads = trace.heads.as_ref().expect("captured");
    let cycles = plan.cycle_count();
    let n_slots = model.config().n_head_slots();
    let mut sums = vec![vec![(0.0f64, 0usize); cycles]; n_slots];
    for (i, &(cycle, pos)) in plan.targets.iter().enumerate() {
        let ctok = plan.tokens[pos + 1];
        let ntok = interrupting_token(&trace.logits[i], ctok);
        for (hi, lens) in lenses.lenses.iter().enumerate() {
            let c = contrast(model, lens, heads[i].update(lens.layer, lens.head), ctok, ntok)?;
            sums[hi][cycle].0 += c;
            sums[hi][cycle].1 += 1;
        }
    }
    let values =
        sums.into_iter().map(|row| row.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()).collect();
    Ok(PairContrast { pair_id: pair.id.clone(), condition, values })
}

/// Dataset-level contrast of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastTrajectory {
    pub condition: Condition,
    pub layer: usize,
    pub head: usize,
    /// Mean over pairs for each cycle index.
    pub mean: Vec<f64>,
    /// Number of pairs contributing to each cycle.
    pub count: Vec<usize>,
}

impl ContrastTrajectory {
    /// Mean over cycles that have data.
    pub fn overall(&self) -> f64 {
        let vals: Vec<f64> = self.mean.iter().zip(&self.count).filter(|(_, &n)| n > 0).map(|(&m, _)| m).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Average per-pair contrasts of one condition into per-head trajectories.
pub fn summarize(
    contrasts: &[PairContrast],
    condition: Condition,
    n_layers: usize,
    n_heads: usize,
) -> Vec<ContrastTrajectory> {
    let subset: Vec<&PairContrast> = contrasts.iter().filter(|c| c.condition == condition).collect();
    let cycles = subset.iter().flat_map(|c| c.values.iter().map(|v| v.len())).max().unwrap_or(0);
    (0..n_layers * n_heads)
        .map(|hi| {
            let mut mean = vec![0.0; cycles];
            let mut count = vec![0usize; cycles];
            for pc in &subset {
                for (c, v) in pc.values[hi].iter().enumerate() {
                    if let Some(v) = v {
                        mean[c] += v;
                        count[c] += 1;
                    }
                }
            }
            for (m, &n) in mean.iter_mut().zip(&count) {
                if n > 0 {
                    *m /= n as f64;
                }
            }
            ContrastTrajectory { condition, layer: hi / n_heads, head: hi % n_heads, mean, count }
        })
        .collect()
}

/// Sequential attribution over a dataset.
pub fn trajectories(
    model: &Model,
    lenses: &LensSet,
    pairs: &[PromptPair],
    condition: Condition,
    k_cycles: usize,
) -> Result<Vec<ContrastTrajectory>> {
    let contrasts =
        pairs.iter().map(|p| pair_contrasts(model, lenses, p, condition, k_cycles)).collect::<Result<Vec<_>>>()?;
    let c = model.config();
    Ok(summarize(&contrasts, condition, c.n_layers, c.n_heads))
}

/// Heads with the highest and lowest mean contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRanking {
    pub condition: Condition,
    /// `(layer, head, mean contrast)`, strongest first.
    pub top: Vec<(usize, usize, f64)>,
    /// Most negative first.
    pub bottom: Vec<(usize, usize, f64)>,
}

pub fn rank_heads(trajectories: &[ContrastTrajectory], condition: Condition, k: usize) -> HeadRanking {
    let mut scored: Vec<(usize, usize, f64)> =
        trajectories.iter().filter(|t| t.condition == condition).map(|t| (t.layer, t.head, t.overall())).collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let top = scored.iter().take(k).copied().collect();
    let bottom = scored.iter().rev().take(k).copied().collect();
    HeadRanking { condition, top, bottom }
}
