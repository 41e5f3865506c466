//! Convolutional LSTM carrying features across event windows.
//!
//! Gates come from a 1×1 projection of `[x, dw3×3(h)]`: the hidden state is
//! mixed spatially by a depthwise 3×3 convolution before the pointwise gate
//! projection. Gate order in the projection is input, forget, output, cell.

use alloc::vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{join, sigmoid, DepthwiseConv, Linear, Padding, Parameters};
use crate::sparsify::FeatureMap;

/// Operations per element for `c' = f⊙c + i⊙g`, `tanh(c')` and `o⊙tanh(c')`.
pub const CELL_UPDATE_OPS: u64 = 3 + 1 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub channels: usize,
    pub hidden_conv: DepthwiseConv,
    /// `2C → 4C` over `[x, dw(h)]`.
    pub gates: Linear,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            channels,
            hidden_conv: DepthwiseConv::init(channels, Padding::Zero, rng),
            gates: Linear::init(2 * channels, 4 * channels, 1.0, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            hidden_conv: DepthwiseConv::zeros(channels, Padding::Zero),
            gates: Linear::zeros(2 * channels, 4 * channels),
        }
    }

    /// Sets every weight reading the hidden state to zero.
    pub fn sever_recurrence(&mut self) {
        let c = self.channels;
        for row in self.gates.weight.chunks_exact_mut(2 * c) {
            row[c..].iter_mut().for_each(|w| *w = 0.0);
        }
    }

    /// Adds `value` to the bias of one gate (0 input, 1 forget, 2 output, 3 cell).
    pub fn shift_gate_bias(&mut self, gate: usize, value: f64) {
        let c = self.channels;
        self.gates.bias[gate * c..(gate + 1) * c].iter_mut().for_each(|b| *b += value);
    }
}

impl Parameters for LstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.hidden_conv.visit(&join(prefix, "hidden_conv"), f);
        self.gates.visit(&join(prefix, "gates"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.hidden_conv.visit_mut(&join(prefix, "hidden_conv"), f);
        self.gates.visit_mut(&join(prefix, "gates"), f);
    }
}

/// Hidden and cell maps of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: FeatureMap,
    pub c: FeatureMap,
}

impl LstmState {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            h: FeatureMap::zeros(channels, rows, cols),
            c: FeatureMap::zeros(channels, rows, cols),
        }
    }
}

pub fn convlstm_step(x: &FeatureMap, s: &LstmState, p: &LstmParams, ops: &mut u64) -> Result<(FeatureMap, LstmState)> {
    let ch = p.channels;
    if x.channels() != ch || s.h.channels() != ch || x.grid_dims() != s.h.grid_dims() || s.c.grid_dims() != x.grid_dims() {
        return Err(shape_err!(
            "ConvLSTM with {ch} channels got input ({}, {:?}) and state {:?}",
            x.channels(),
            x.grid_dims(),
            s.h.grid_dims()
        ));
    }
    let (rows, cols) = x.grid_dims();
    let h_mixed = p.hidden_conv.forward_dense(&s.h, ops)?.to_tokens();
    let x_tokens = x.to_tokens();
    let n = rows * cols;
    let mut joined = vec![0.0; n * 2 * ch];
    for i in 0..n {
        joined[i * 2 * ch..i * 2 * ch + ch].copy_from_slice(&x_tokens[i * ch..(i + 1) * ch]);
        joined[i * 2 * ch + ch..(i + 1) * 2 * ch].copy_from_slice(&h_mixed[i * ch..(i + 1) * ch]);
    }
    let pre = p.gates.forward(&joined, ops)?;
    let c_prev = s.c.to_tokens();
    let mut h_next = vec![0.0; n * ch];
    let mut c_next = vec![0.0; n * ch];
    for i in 0..n {
        let g = &pre[i * 4 * ch..(i + 1) * 4 * ch];
        for k in 0..ch {
            let input = sigmoid(g[k]);
            let forget = sigmoid(g[ch + k]);
            let output = sigmoid(g[2 * ch + k]);
            let cell = libm::tanh(g[3 * ch + k]);
            let c = forget * c_prev[i * ch + k] + input * cell;
            c_next[i * ch + k] = c;
            h_next[i * ch + k] = output * libm::tanh(c);
        }
    }
    // Four gate nonlinearities plus the cell update.
    *ops += (n * ch) as u64 * (4 + CELL_UPDATE_OPS);
    let h = FeatureMap::from_tokens(ch, rows, cols, &h_next)?;
    let c = FeatureMap::from_tokens(ch, rows, cols, &c_next)?;
    Ok((h.clone(), LstmState { h, c }))
}

/// Collects the gate pre-activations of a scalar (single channel, 1×1 grid) cell.
#[cfg(test)]
fn scalar_reference(x: f64, h: f64, c: f64, w_x: [f64; 4], w_h: [f64; 4], centre: f64, b: [f64; 4]) -> (f64, f64) {
    let z: Vec<f64> = (0..4).map(|g| w_x[g] * x + w_h[g] * centre * h + b[g]).collect();
    let (i, f, o, g) = (sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]), libm::tanh(z[3]));
    let c2 = f * c + i * g;
    (o * libm::tanh(c2), c2)
}
