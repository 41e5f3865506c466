//! Global channel interaction.
//!
//! Branch one treats each channel's flattened spatial plane as one step of
//! a sequence over channels and scans it in both directions; branch two is
//! a 1×1 channel mix. Their sum is projected and added to the input. The
//! block works on the dense map.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{apply_inplace, join, silu, DepthwiseConv, Linear, Padding, Parameters};
use crate::s6::{S6Params, ScanMode};
use crate::sparsify::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct GciParams {
    pub channels: usize,
    /// Token grid the channel scan was sized for; lanes = rows·cols.
    pub grid: (usize, usize),
    pub pre_proj: Linear,
    pub conv: DepthwiseConv,
    pub scan_fwd: S6Params,
    pub scan_bwd: S6Params,
    /// 1×1 convolution, `C → C`.
    pub mix: Linear,
    pub out_proj: Linear,
    pub mode: ScanMode,
}

impl GciParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, grid: (usize, usize), state: usize, rng: &mut R) -> Self {
        let lanes = grid.0 * grid.1;
        Self {
            channels,
            grid,
            pre_proj: Linear::init(channels, channels, 1.0, rng),
            conv: DepthwiseConv::init(channels, Padding::Replicate, rng),
            scan_fwd: S6Params::init(lanes, state, rng),
            scan_bwd: S6Params::init(lanes, state, rng),
            mix: Linear::init(channels, channels, 1.0, rng),
            out_proj: Linear::init(channels, channels, 0.5, rng),
            mode: ScanMode::Sequential,
        }
    }
}

impl Parameters for GciParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.pre_proj.visit(&join(prefix, "pre_proj"), f);
        self.conv.visit(&join(prefix, "conv"), f);
        self.scan_fwd.visit(&join(prefix, "scan_fwd"), f);
        self.scan_bwd.visit(&join(prefix, "scan_bwd"), f);
        self.mix.visit(&join(prefix, "mix"), f);
        self.out_proj.visit(&join(prefix, "out_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.pre_proj.visit_mut(&join(prefix, "pre_proj"), f);
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.scan_fwd.visit_mut(&join(prefix, "scan_fwd"), f);
        self.scan_bwd.visit_mut(&join(prefix, "scan_bwd"), f);
        self.mix.visit_mut(&join(prefix, "mix"), f);
        self.out_proj.visit_mut(&join(prefix, "out_proj"), f);
    }
}

fn flip_rows(rows: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows.rchunks_exact(width) {
        out.extend_from_slice(row);
    }
    out
}

/// Scans channels forward with `fwd` and in reverse with `bwd`, then sums.
///
/// The channel-major layout of a feature map is already the `C × (H·W)`
/// sequence the scan consumes.
pub fn bidi_channel_scan(
    x: &FeatureMap,
    fwd: &S6Params,
    bwd: &S6Params,
    mode: ScanMode,
    ops: &mut u64,
) -> Result<FeatureMap> {
    let lanes = x.plane();
    if fwd.lanes() != lanes || bwd.lanes() != lanes {
        return Err(shape_err!(
            "channel scan sized for {} lanes, feature plane has {lanes}",
            fwd.lanes()
        ));
    }
    let seq = x.as_slice();
    let forward = fwd.forward_counted(seq, mode, ops)?;
    let backward = bwd.forward_counted(&flip_rows(seq, lanes), mode, ops)?;
    let backward = flip_rows(&backward, lanes);
    let sum: Vec<f64> = forward.iter().zip(&backward).map(|(a, b)| a + b).collect();
    *ops += sum.len() as u64;
    FeatureMap::from_vec(x.channels(), x.rows(), x.cols(), sum)
}

pub fn gci_forward(x: &FeatureMap, p: &GciParams, ops: &mut u64) -> Result<FeatureMap> {
    if x.channels() != p.channels || x.grid_dims() != p.grid {
        return Err(shape_err!(
            "GCI sized for ({}, {:?}), input is ({}, {:?})",
            p.channels,
            p.grid,
            x.channels(),
            x.grid_dims()
        ));
    }
    let (rows, cols) = x.grid_dims();
    let tokens = x.to_tokens();

    let pre = p.pre_proj.forward(&tokens, ops)?;
    let pre = FeatureMap::from_tokens(p.channels, rows, cols, &pre)?;
    let mut local = p.conv.forward_dense(&pre, ops)?;
    apply_inplace(local.as_mut_slice(), silu, ops);
    let global = bidi_channel_scan(&local, &p.scan_fwd, &p.scan_bwd, p.mode, ops)?.to_tokens();

    let pointwise = p.mix.forward(&tokens, ops)?;
    let merged: Vec<f64> = global.iter().zip(&pointwise).map(|(a, b)| a + b).collect();
    *ops += merged.len() as u64;
    let delta = p.out_proj.forward(&merged, ops)?;
    let out: Vec<f64> = tokens.iter().zip(&delta).map(|(a, b)| a + b).collect();
    *ops += out.len() as u64;
    FeatureMap::from_tokens(p.channels, rows, cols, &out)
}
