//! Small dense building blocks on token-major buffers.
//!
//! Buffers are `n × d` row-major slices of `f64`, one row per token. Every
//! kernel adds the floating-point operations it executes to an `ops`
//! counter (one multiply-accumulate is two operations, a nonlinearity one).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::sparsify::FeatureMap;

/// Operations per layer-normalized element: mean, variance, normalize, affine.
pub const LAYER_NORM_OPS: u64 = 8;

/// Named parameter tensors, for checkpoints and bulk edits.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64, n: usize) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

pub fn apply_inplace(buf: &mut [f64], f: fn(f64) -> f64, ops: &mut u64) {
    for v in buf.iter_mut() {
        *v = f(*v);
    }
    *ops += buf.len() as u64;
}

/// Affine map `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform weights in `±gain/√in`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / libm::sqrt(in_dim.max(1) as f64);
        Self {
            in_dim,
            out_dim,
            weight: uniform(rng, bound, in_dim * out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64], ops: &mut u64) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.in_dim.max(1)) {
            return Err(shape_err!("linear expects rows of {}, got {} values", self.in_dim, x.len()));
        }
        let n = x.len() / self.in_dim.max(1);
        let mut out = vec![0.0; n * self.out_dim];
        for (row, dst) in x.chunks_exact(self.in_dim).zip(out.chunks_exact_mut(self.out_dim)) {
            for (o, d) in dst.iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                *d = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + self.bias[o];
            }
        }
        *ops += (n * self.out_dim * (2 * self.in_dim + 1)) as u64;
        Ok(out)
    }

    pub fn ops(&self, rows: usize) -> u64 {
        (rows * self.out_dim * (2 * self.in_dim + 1)) as u64
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &self.weight);
        f(&join(prefix, "bias"), &[self.out_dim], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &mut self.weight);
        f(&join(prefix, "bias"), &[self.out_dim], &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[f64], ops: &mut u64) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; x.len()];
        for (row, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + self.eps);
            for i in 0..d {
                dst[i] = (row[i] - mean) * inv * self.gamma[i] + self.beta[i];
            }
        }
        *ops += x.len() as u64 * LAYER_NORM_OPS;
        out
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "gamma"), &[self.dim], &self.gamma);
        f(&join(prefix, "beta"), &[self.dim], &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "gamma"), &[self.dim], &mut self.gamma);
        f(&join(prefix, "beta"), &[self.dim], &mut self.beta);
    }
}

/// Border policy of the depthwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Out-of-grid taps read zero.
    Zero,
    /// Out-of-grid taps read the nearest in-grid value.
    Replicate,
}

/// 3×3 depthwise convolution with per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv {
    pub channels: usize,
    /// `channels × 9`, taps row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub padding: Padding,
}

/// Operations per output element of a 3×3 depthwise tap sum plus bias.
pub const DWCONV_OPS: u64 = 2 * 9 + 1;

impl DepthwiseConv {
    pub fn zeros(channels: usize, padding: Padding) -> Self {
        Self {
            channels,
            kernel: vec![0.0; channels * 9],
            bias: vec![0.0; channels],
            padding,
        }
    }

    /// Centre tap 1, everything else 0.
    pub fn identity(channels: usize, padding: Padding) -> Self {
        let mut k = Self::zeros(channels, padding);
        for c in 0..channels {
            k.kernel[c * 9 + 4] = 1.0;
        }
        k
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, padding: Padding, rng: &mut R) -> Self {
        Self {
            channels,
            kernel: uniform(rng, 1.0 / 3.0, channels * 9),
            bias: vec![0.0; channels],
            padding,
        }
    }

    fn tap(&self, r: isize, q: isize, rows: usize, cols: usize) -> Option<(usize, usize)> {
        match self.padding {
            Padding::Zero => {
                if r < 0 || q < 0 || r >= rows as isize || q >= cols as isize {
                    None
                } else {
                    Some((r as usize, q as usize))
                }
            }
            Padding::Replicate => Some((
                r.clamp(0, rows as isize - 1) as usize,
                q.clamp(0, cols as isize - 1) as usize,
            )),
        }
    }

    /// Dense convolution over a whole feature map.
    pub fn forward_dense(&self, x: &FeatureMap, ops: &mut u64) -> Result<FeatureMap> {
        if x.channels() != self.channels {
            return Err(shape_err!("depthwise conv has {} channels, input {}", self.channels, x.channels()));
        }
        let (rows, cols) = x.grid_dims();
        let mut out = FeatureMap::zeros(self.channels, rows, cols);
        for c in 0..self.channels {
            let k = &self.kernel[c * 9..c * 9 + 9];
            for r in 0..rows {
                for q in 0..cols {
                    let mut acc = self.bias[c];
                    for (t, w) in k.iter().enumerate() {
                        let (dr, dq) = (t as isize / 3 - 1, t as isize % 3 - 1);
                        if let Some((rr, qq)) = self.tap(r as isize + dr, q as isize + dq, rows, cols) {
                            acc += w * x.at(c, rr, qq);
                        }
                    }
                    *out.at_mut(c, r, q) = acc;
                }
            }
        }
        *ops += (self.channels * rows * cols) as u64 * DWCONV_OPS;
        Ok(out)
    }

    /// Convolution evaluated only at kept tokens. `tokens` is `n × C`,
    /// `index` maps grid positions to rows of `tokens`; positions without a
    /// row read zero.
    pub fn forward_sparse(
        &self,
        tokens: &[f64],
        coords: &[(usize, usize)],
        index: &[Option<usize>],
        grid: (usize, usize),
        ops: &mut u64,
    ) -> Vec<f64> {
        let (rows, cols) = grid;
        let ch = self.channels;
        let mut out = vec![0.0; coords.len() * ch];
        for (i, &(r, q)) in coords.iter().enumerate() {
            let dst = &mut out[i * ch..(i + 1) * ch];
            dst.copy_from_slice(&self.bias);
            for t in 0..9 {
                let (dr, dq) = (t as isize / 3 - 1, t as isize % 3 - 1);
                let Some((rr, qq)) = self.tap(r as isize + dr, q as isize + dq, rows, cols) else {
                    continue;
                };
                let Some(j) = index[rr * cols + qq] else {
                    continue;
                };
                let src = &tokens[j * ch..(j + 1) * ch];
                for c in 0..ch {
                    dst[c] += self.kernel[c * 9 + t] * src[c];
                }
            }
        }
        *ops += (coords.len() * ch) as u64 * DWCONV_OPS;
        out
    }
}

impl Parameters for DepthwiseConv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "kernel"), &[self.channels, 3, 3], &self.kernel);
        f(&join(prefix, "bias"), &[self.channels], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "kernel"), &[self.channels, 3, 3], &mut self.kernel);
        f(&join(prefix, "bias"), &[self.channels], &mut self.bias);
    }
}

impl Parameters for crate::s6::S6Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let (l, n) = (self.lanes(), self.state_dim());
        f(&join(prefix, "log_a"), &[l, n], &self.log_a);
        f(&join(prefix, "w_delta"), &[l, l], &self.w_delta);
        f(&join(prefix, "b_delta"), &[l], &self.b_delta);
        f(&join(prefix, "w_b"), &[n, l], &self.w_b);
        f(&join(prefix, "w_c"), &[n, l], &self.w_c);
        f(&join(prefix, "skip"), &[l], &self.skip);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let (l, n) = (self.lanes(), self.state_dim());
        f(&join(prefix, "log_a"), &[l, n], &mut self.log_a);
        f(&join(prefix, "w_delta"), &[l, l], &mut self.w_delta);
        f(&join(prefix, "b_delta"), &[l], &mut self.b_delta);
        f(&join(prefix, "w_b"), &[n, l], &mut self.w_b);
        f(&join(prefix, "w_c"), &[n, l], &mut self.w_c);
        f(&join(prefix, "skip"), &[l], &mut self.skip);
    }
}
