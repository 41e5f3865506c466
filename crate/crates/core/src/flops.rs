//! Operation accounting.
//!
//! Convention: a multiply-accumulate is two operations, every elementwise
//! nonlinearity, addition or product is one, layer normalization costs
//! eight per element and a 3×3 depthwise tap sum with bias costs nineteen
//! per output element. Counts are exact integers.
//!
//! The analytic counter below is written out independently from the block
//! implementations; the tests pin the two against each other.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::backbone::{backbone_forward, BackboneConfig, BackboneParams, BackboneState, STAGES};
use crate::error::{config_err, Result};
use crate::event::VoxelGrid;
use crate::stca::{SparsificationMap, TokenScoreMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockKind {
    PatchEmbed,
    Downsample,
    SparseSs2d,
    SparseMlp,
    Gci,
    ConvLstm,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::PatchEmbed,
        BlockKind::Downsample,
        BlockKind::SparseSs2d,
        BlockKind::SparseMlp,
        BlockKind::Gci,
        BlockKind::ConvLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::PatchEmbed => "patch_embed",
            BlockKind::Downsample => "downsample",
            BlockKind::SparseSs2d => "sparse_ss2d",
            BlockKind::SparseMlp => "sparse_mlp",
            BlockKind::Gci => "gci",
            BlockKind::ConvLstm => "conv_lstm",
        }
    }

    /// Blocks whose cost scales with the number of kept tokens.
    pub fn is_token_wise(self) -> bool {
        matches!(self, BlockKind::SparseSs2d | BlockKind::SparseMlp)
    }
}

/// Zero-based stage plus block kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub stage: usize,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopMeter {
    counts: BTreeMap<BlockKey, u64>,
}

impl FlopMeter {
    pub fn add(&mut self, key: BlockKey, ops: u64) {
        *self.counts.entry(key).or_insert(0) += ops;
    }

    pub fn get(&self, key: BlockKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn token_wise(&self) -> u64 {
        self.counts.iter().filter(|(k, _)| k.kind.is_token_wise()).map(|(_, v)| v).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockKey, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    pub fn merge(&mut self, other: &FlopMeter) {
        for (k, v) in other.iter() {
            self.add(k, v);
        }
    }
}

/// One forward pass of an S6 unit over `t` steps, `l` lanes, `n` states.
pub fn s6_flops(t: u64, l: u64, n: u64) -> u64 {
    // Step-size projection + softplus: 2L² + 2L; B and C projections: 4NL;
    // discretization 5NL, recurrence 2NL, readout 2NL + 2L.
    t * (2 * l * l + 4 * l + 13 * l * n)
}

fn linear(rows: u64, din: u64, dout: u64) -> u64 {
    rows * dout * (2 * din + 1)
}

fn ss2d_flops(t: u64, c: u64, e: u64, n: u64) -> u64 {
    let projections = linear(t, c, 2 * e) + linear(t, e, c);
    let norms = 8 * t * c + 8 * t * e;
    // conv 19, two SiLUs, two merge additions, gate product.
    let elementwise = t * e * (19 + 2 + 2 + 1) + t * c;
    projections + norms + elementwise + 3 * s6_flops(t, e, n)
}

fn mlp_flops(t: u64, c: u64, hidden: u64) -> u64 {
    8 * t * c + linear(t, c, hidden) + t * hidden + linear(t, hidden, c) + t * c
}

fn gci_flops(g: u64, c: u64, n: u64) -> u64 {
    // pre-projection, 1×1 mix, output projection; conv, SiLU, three sums.
    3 * linear(g, c, c) + g * c * (19 + 1 + 3) + 2 * s6_flops(c, g, n)
}

fn lstm_flops(g: u64, c: u64) -> u64 {
    g * c * 19 + linear(g, 2 * c, 4 * c) + g * c * 9
}

/// Closed-form operation counts for a backbone with `kept[s]` kept tokens
/// at stage `s`.
pub fn analytic_meter(cfg: &BackboneConfig, kept: &[usize; STAGES]) -> Result<FlopMeter> {
    cfg.validate()?;
    let mut m = FlopMeter::default();
    let n = cfg.state as u64;
    for s in 0..STAGES {
        let (r, q) = cfg.stage_grid(s);
        let g = (r * q) as u64;
        if kept[s] > r * q {
            return Err(config_err!("stage {} keeps {} of {} tokens", s + 1, kept[s], r * q));
        }
        let t = kept[s] as u64;
        let c = cfg.channels[s] as u64;
        let key = |kind| BlockKey { stage: s, kind };
        if s == 0 {
            m.add(key(BlockKind::PatchEmbed), linear(g, cfg.embed_in() as u64, c));
        } else {
            m.add(key(BlockKind::Downsample), linear(g, 4 * cfg.channels[s - 1] as u64, c));
        }
        m.add(key(BlockKind::SparseSs2d), ss2d_flops(t, c, cfg.expand as u64 * c, n));
        m.add(key(BlockKind::SparseMlp), mlp_flops(t, c, cfg.mlp_ratio as u64 * c));
        if cfg.gci[s] {
            m.add(key(BlockKind::Gci), gci_flops(g, c, n));
        }
        m.add(key(BlockKind::ConvLstm), lstm_flops(g, c));
    }
    Ok(m)
}

/// Closed-form report for per-stage kept ratios, rounded to whole tokens,
/// against the all-kept configuration.
pub fn count_analytic(cfg: &BackboneConfig, ratios: &[f64; STAGES]) -> Result<FlopsReport> {
    let mut kept = [0usize; STAGES];
    for s in 0..STAGES {
        let r = ratios[s];
        if !(0.0..=1.0).contains(&r) {
            return Err(config_err!("kept ratio {r} at stage {} is outside [0, 1]", s + 1));
        }
        let (rows, cols) = cfg.stage_grid(s);
        kept[s] = libm::round(r * (rows * cols) as f64) as usize;
    }
    let full = core::array::from_fn(|s| {
        let (rows, cols) = cfg.stage_grid(s);
        rows * cols
    });
    Ok(FlopsReport::compare(
        &analytic_meter(cfg, &kept)?,
        &analytic_meter(cfg, &full)?,
        *ratios,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFlops {
    pub key: BlockKey,
    pub sparse: u64,
    pub dense: u64,
}

impl BlockFlops {
    pub fn ratio(&self) -> f64 {
        if self.dense == 0 {
            1.0
        } else {
            self.sparse as f64 / self.dense as f64
        }
    }
}

/// Sparse versus dense operation counts for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub blocks: Vec<BlockFlops>,
    /// Kept-token ratio per stage.
    pub kept_ratios: [f64; STAGES],
}

impl FlopsReport {
    pub fn compare(sparse: &FlopMeter, dense: &FlopMeter, kept_ratios: [f64; STAGES]) -> Self {
        let mut keys: Vec<BlockKey> = dense.iter().map(|(k, _)| k).chain(sparse.iter().map(|(k, _)| k)).collect();
        keys.sort();
        keys.dedup();
        let blocks = keys
            .into_iter()
            .map(|key| BlockFlops {
                key,
                sparse: sparse.get(key),
                dense: dense.get(key),
            })
            .collect();
        Self { blocks, kept_ratios }
    }

    pub fn sparse_total(&self) -> u64 {
        self.blocks.iter().map(|b| b.sparse).sum()
    }

    pub fn dense_total(&self) -> u64 {
        self.blocks.iter().map(|b| b.dense).sum()
    }

    /// Fraction of dense operations saved, `1 − sparse/dense`.
    pub fn reduction(&self) -> f64 {
        let d = self.dense_total();
        if d == 0 {
            0.0
        } else {
            1.0 - self.sparse_total() as f64 / d as f64
        }
    }

    pub fn token_wise_sparse(&self) -> u64 {
        self.blocks.iter().filter(|b| b.key.kind.is_token_wise()).map(|b| b.sparse).sum()
    }

    pub fn token_wise_dense(&self) -> u64 {
        self.blocks.iter().filter(|b| b.key.kind.is_token_wise()).map(|b| b.dense).sum()
    }
}

/// Runs one window twice, with the given keep map and with everything kept,
/// and reports both meters side by side.
pub fn measure(
    params: &BackboneParams,
    voxels: &VoxelGrid,
    map: &SparsificationMap,
    scores: &TokenScoreMap,
    state: &BackboneState,
) -> Result<FlopsReport> {
    let sparse = backbone_forward(params, voxels, map, scores, state)?;
    let (r, c) = map.dims();
    let dense = backbone_forward(params, voxels, &SparsificationMap::all(r, c, true), scores, state)?;
    let stages = crate::backbone::stage_maps(&params.config, map, scores)?;
    let mut ratios = [0.0; STAGES];
    for (s, (m, _)) in stages.iter().enumerate() {
        ratios[s] = m.kept_ratio();
    }
    Ok(FlopsReport::compare(&sparse.meter, &dense.meter, ratios))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stca::downsample_map;

    fn small() -> BackboneConfig {
        BackboneConfig {
            input: (32, 32),
            patch: 2,
            bins: 2,
            channels: [4, 6, 8, 10],
            state: 3,
            mlp_ratio: 2,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn s6_count_matches_kernel() {
        use crate::s6::{S6Params, ScanMode};
        let p = S6Params::zeros(5, 3);
        let mut ops = 0;
        p.forward_counted(&[0.0; 35], ScanMode::Sequential, &mut ops).unwrap();
        assert_eq!(ops, s6_flops(7, 5, 3));
        // T·L·(2L + 4 + 13N) = 7·5·(10 + 4 + 39)
        assert_eq!(ops, 1855);
    }

    #[test]
    fn measured_equals_analytic() {
        let cfg = small();
        let p = BackboneParams::init(cfg, 3).unwrap();
        let v = VoxelGrid::zeros(cfg.bins, 32, 32, 100);
        let (r, c) = cfg.stage_grid(0);
        let map = SparsificationMap {
            keep: Grid::from_fn(r, c, |i, j| i < 5 && j % 3 == 0),
            threshold: 0.0,
            beta: None,
        };
        let scores = TokenScoreMap::new(Grid::from_fn(r, c, |i, j| (i + 2 * j) as f64), cfg.patch);
        let report = measure(&p, &v, &map, &scores, &p.initial_state()).unwrap();

        let mut kept = [0; STAGES];
        let mut m = map.clone();
        for s in 0..STAGES {
            kept[s] = m.kept_count();
            if s + 1 < STAGES {
                m = downsample_map(&m, 2).unwrap();
            }
        }
        let sparse = analytic_meter(&cfg, &kept).unwrap();
        let dense = analytic_meter(&cfg, &[256, 64, 16, 4]).unwrap();
        for b in &report.blocks {
            assert_eq!(b.sparse, sparse.get(b.key), "{:?}", b.key);
            assert_eq!(b.dense, dense.get(b.key), "{:?}", b.key);
        }
        assert_eq!(report.sparse_total(), sparse.total());
    }

    #[test]
    fn token_wise_scales_linearly() {
        let cfg = BackboneConfig::default();
        let full = count_analytic(&cfg, &[1.0; 4]).unwrap();
        assert_eq!(full.sparse_total(), full.dense_total());
        assert_eq!(full.reduction(), 0.0);
        let half = count_analytic(&cfg, &[0.5; 4]).unwrap();
        assert_eq!(2 * half.token_wise_sparse(), half.token_wise_dense());
        for b in half.blocks.iter().filter(|b| !b.key.kind.is_token_wise()) {
            assert_eq!(b.sparse, b.dense);
        }
    }

    #[test]
    fn lowering_a_ratio_never_adds_work() {
        let cfg = BackboneConfig::default();
        let base = count_analytic(&cfg, &[0.6, 0.7, 0.8, 0.9]).unwrap().sparse_total();
        for s in 0..STAGES {
            let mut r = [0.6, 0.7, 0.8, 0.9];
            r[s] -= 0.25;
            assert!(count_analytic(&cfg, &r).unwrap().sparse_total() <= base);
        }
    }

    #[test]
    fn ratio_outside_unit_interval() {
        assert!(count_analytic(&BackboneConfig::default(), &[0.5, 1.2, 0.5, 0.5]).is_err());
        assert!(analytic_meter(&small(), &[257, 0, 0, 0]).is_err());
    }

    #[test]
    fn hand_counted_mlp() {
        // One token, C = 2, hidden 4: LN 16, fc1 4·5 = 20, GELU 4, fc2 2·9 = 18, residual 2.
        assert_eq!(mlp_flops(1, 2, 4), 60);
    }
}
