//! Dense kernels shared by the forward pass, the lens trainer and the metrics.
//!
//! All reductions run in a fixed order so that results are bitwise
//! reproducible for a given input.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    /// `out = self · x`, optionally plus `bias`.
    pub fn matvec_into(&self, x: &[f32], bias: Option<&[f32]>, out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let v = dot(self.row(r), x);
            *o = match bias {
                Some(b) => v + b[r],
                None => v,
            };
        }
    }

    pub fn matvec(&self, x: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, bias, &mut out);
        out
    }

    /// `out = selfᵀ · x`.
    pub fn matvec_t(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0f32; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, self.row(r), &mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let a8 = &a[i * 8..i * 8 + 8];
        let b8 = &b[i * 8..i * 8 + 8];
        for k in 0..8 {
            acc[k] += a8[k] * b8[k];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Layer normalisation over the whole vector, statistics in `f64`.
pub fn layer_norm(x: &[f32], weight: &[f32], bias: &[f32], eps: f32) -> Vec<f32> {
    let (mean, inv_std) = norm_stats(x, eps);
    x.iter().zip(weight.iter().zip(bias)).map(|(&v, (&w, &b))| (((v as f64 - mean) * inv_std) as f32) * w + b).collect()
}

/// Mean and inverse standard deviation (biased variance plus `eps`).
pub fn norm_stats(x: &[f32], eps: f32) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps as f64))
}

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2))
}

/// Tanh approximation of GELU (`gelu_new` in GPT-2 style configs).
#[inline]
pub fn gelu_tanh(x: f32) -> f32 {
    const C: f32 = core::f32::consts::FRAC_2_SQRT_PI * core::f32::consts::FRAC_1_SQRT_2;
    0.5 * x * (1.0 + libm::tanhf(C * (x + 0.044_715 * x * x * x)))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Softmax in double precision.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z as f64 - max)).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Log-partition `ln Σ exp(z)` computed around the maximum.
pub fn log_sum_exp(logits: &[f32]) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let total: f64 = logits.iter().map(|&z| libm::exp(z as f64 - max)).sum();
    max + libm::log(total)
}

/// Shannon entropy (nats) of `softmax(logits)`, via `ln Z − E[z]`.
pub fn entropy_from_logits(logits: &[f32]) -> f64 {
    let lse = log_sum_exp(logits);
    let mut expect = 0.0f64;
    for &z in logits {
        let p = libm::exp(z as f64 - lse);
        expect += p * z as f64;
    }
    (lse - expect).max(0.0)
}

/// `KL(p ‖ softmax(logits))` in nats, skipping zero-mass entries of `p`.
pub fn kl_to_logits(p: &[f64], logits: &[f32]) -> f64 {
    let lse = log_sum_exp(logits);
    let mut kl = 0.0f64;
    for (&pi, &z) in p.iter().zip(logits) {
        if pi > 0.0 {
            kl += pi * (libm::log(pi) - (z as f64 - lse));
        }
    }
    kl.max(0.0)
}
