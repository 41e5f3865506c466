//! Sparse 2D selective scan.
//!
//! Kept tokens are normalized, projected to a scan branch `u` and a gate
//! `z`, locally mixed by a depthwise convolution over the kept grid, then
//! scanned along three orders (raster forward, raster backward, IPL), each
//! with its own S6 unit. Outputs return to token order, are summed, gated
//! and projected back. Discarded tokens bypass the block unchanged.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{apply_inplace, join, silu, DepthwiseConv, LayerNorm, Linear, Padding, Parameters};
use crate::s6::{S6Params, ScanMode};
use crate::scan_order::{bidi_orders, ipl_order, ipl_window_order, IplConfig, Permutation};
use crate::sparsify::{gather_tokens, scatter_tokens, FeatureMap};
use crate::stca::{SparsificationMap, TokenScoreMap};

/// Names of the three scan sequences, in parameter order.
pub const SEQUENCES: [&str; 3] = ["bidi_fwd", "bidi_bwd", "ipl"];

#[derive(Debug, Clone, PartialEq)]
pub struct Ss2dParams {
    pub channels: usize,
    pub inner: usize,
    pub norm: LayerNorm,
    /// `C → 2E`: scan branch then gate.
    pub in_proj: Linear,
    pub conv: DepthwiseConv,
    /// One unit per sequence, ordered as [`SEQUENCES`].
    pub scans: [S6Params; 3],
    pub out_norm: LayerNorm,
    pub out_proj: Linear,
    pub ipl: IplConfig,
    pub mode: ScanMode,
}

impl Ss2dParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, inner: usize, state: usize, ipl: IplConfig, rng: &mut R) -> Self {
        Self {
            channels,
            inner,
            norm: LayerNorm::new(channels),
            in_proj: Linear::init(channels, 2 * inner, 1.0, rng),
            conv: DepthwiseConv::init(inner, Padding::Zero, rng),
            scans: [
                S6Params::init(inner, state, rng),
                S6Params::init(inner, state, rng),
                S6Params::init(inner, state, rng),
            ],
            out_norm: LayerNorm::new(inner),
            out_proj: Linear::init(inner, channels, 0.5, rng),
            ipl,
            mode: ScanMode::Sequential,
        }
    }
}

impl Parameters for Ss2dParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.in_proj.visit(&join(prefix, "in_proj"), f);
        self.conv.visit(&join(prefix, "conv"), f);
        for (name, s) in SEQUENCES.iter().zip(&self.scans) {
            s.visit(&join(prefix, name), f);
        }
        self.out_norm.visit(&join(prefix, "out_norm"), f);
        self.out_proj.visit(&join(prefix, "out_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.in_proj.visit_mut(&join(prefix, "in_proj"), f);
        self.conv.visit_mut(&join(prefix, "conv"), f);
        for (name, s) in SEQUENCES.iter().zip(&mut self.scans) {
            s.visit_mut(&join(prefix, name), f);
        }
        self.out_norm.visit_mut(&join(prefix, "out_norm"), f);
        self.out_proj.visit_mut(&join(prefix, "out_proj"), f);
    }
}

/// Splits `n × 2E` rows into the scan branch and the gate.
fn split_branches(uz: &[f64], inner: usize) -> (Vec<f64>, Vec<f64>) {
    let n = uz.len() / (2 * inner);
    let mut u = Vec::with_capacity(n * inner);
    let mut z = Vec::with_capacity(n * inner);
    for row in uz.chunks_exact(2 * inner) {
        u.extend_from_slice(&row[..inner]);
        z.extend_from_slice(&row[inner..]);
    }
    (u, z)
}

/// Everything after the local mixing: scans, merge, gate, projection.
/// Returns the residual update for each token.
fn scan_and_project(
    p: &Ss2dParams,
    u: &[f64],
    mut z: Vec<f64>,
    orders: &[Permutation; 3],
    ops: &mut u64,
) -> Result<Vec<f64>> {
    let e = p.inner;
    let mut merged = vec![0.0; u.len()];
    for (scan, order) in p.scans.iter().zip(orders) {
        let seq = order.apply_rows(u, e);
        let y = scan.forward_counted(&seq, p.mode, ops)?;
        let y = order.unapply_rows(&y, e);
        for (m, v) in merged.iter_mut().zip(&y) {
            *m += v;
        }
    }
    // Two additions merge three sequences.
    *ops += 2 * u.len() as u64;
    let mut y = p.out_norm.forward(&merged, ops);
    apply_inplace(&mut z, silu, ops);
    for (v, g) in y.iter_mut().zip(&z) {
        *v *= g;
    }
    *ops += y.len() as u64;
    p.out_proj.forward(&y, ops)
}

fn check_inputs(x: &FeatureMap, map: &SparsificationMap, scores: &TokenScoreMap, p: &Ss2dParams) -> Result<()> {
    if x.channels() != p.channels {
        return Err(shape_err!("sparse SS2D expects {} channels, got {}", p.channels, x.channels()));
    }
    if map.dims() != x.grid_dims() || scores.dims() != x.grid_dims() {
        return Err(shape_err!(
            "keep map {:?} / scores {:?} do not match grid {:?}",
            map.dims(),
            scores.dims(),
            x.grid_dims()
        ));
    }
    Ok(())
}

/// Sparse SS2D with residual connection and passthrough at discarded tokens.
pub fn sparse_ss2d(
    x: &FeatureMap,
    map: &SparsificationMap,
    scores: &TokenScoreMap,
    p: &Ss2dParams,
    ops: &mut u64,
) -> Result<FeatureMap> {
    check_inputs(x, map, scores, p)?;
    let ts = gather_tokens(x, map)?;
    if ts.is_empty() {
        return Ok(x.clone());
    }
    let h = p.norm.forward(ts.values(), ops);
    let uz = p.in_proj.forward(&h, ops)?;
    let (u, z) = split_branches(&uz, p.inner);
    let mut u = p.conv.forward_sparse(&u, ts.coords(), &ts.index_grid(), x.grid_dims(), ops);
    apply_inplace(&mut u, silu, ops);

    let (fwd, bwd) = bidi_orders(&ts);
    let ipl = ipl_order(&ts, scores, &p.ipl)?;
    let delta = scan_and_project(p, &u, z, &[fwd, bwd, ipl], ops)?;

    let mut out = ts.values().to_vec();
    for (o, d) in out.iter_mut().zip(&delta) {
        *o += d;
    }
    *ops += out.len() as u64;
    scatter_tokens(&ts.with_values(p.channels, out)?, x)
}

/// Dense counterpart: every token participates and orders come straight
/// from the grid.
pub fn dense_ss2d(x: &FeatureMap, scores: &TokenScoreMap, p: &Ss2dParams, ops: &mut u64) -> Result<FeatureMap> {
    let (rows, cols) = x.grid_dims();
    check_inputs(x, &SparsificationMap::all(rows, cols, true), scores, p)?;
    let tokens = x.to_tokens();
    let h = p.norm.forward(&tokens, ops);
    let uz = p.in_proj.forward(&h, ops)?;
    let (u, z) = split_branches(&uz, p.inner);
    let u_map = FeatureMap::from_tokens(p.inner, rows, cols, &u)?;
    let mut u = p.conv.forward_dense(&u_map, ops)?.to_tokens();
    apply_inplace(&mut u, silu, ops);

    let n = rows * cols;
    let fwd = Permutation::identity(n);
    let bwd = Permutation::new((0..n).rev().collect())?;
    let (windows, _) = ipl_window_order(scores, &p.ipl)?;
    let k = p.ipl.window;
    let wcols = cols / k;
    let mut ipl = Vec::with_capacity(n);
    for w in windows {
        let (wr, wc) = (w / wcols, w % wcols);
        for r in wr * k..(wr + 1) * k {
            for c in wc * k..(wc + 1) * k {
                ipl.push(r * cols + c);
            }
        }
    }
    let delta = scan_and_project(p, &u, z, &[fwd, bwd, Permutation::new(ipl)?], ops)?;
    let out: Vec<f64> = tokens.iter().zip(&delta).map(|(a, b)| a + b).collect();
    *ops += out.len() as u64;
    FeatureMap::from_tokens(p.channels, rows, cols, &out)
}
