//! Four-stage sparse backbone.
//!
//! Stage layout: patch embedding (stage 1) or 2×2 patch merging (later
//! stages), sparse SS2D, sparse MLP, optional global channel interaction,
//! then a ConvLSTM whose hidden map is the stage output. The keep map and
//! token scores come from STCA at stage-1 resolution and are max-pooled by
//! two for each later stage.

pub mod gci;
pub mod lstm;
pub mod mlp;
pub mod ss2d;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Result};
use crate::event::VoxelGrid;
use crate::flops::{BlockKey, BlockKind, FlopMeter};
use crate::nn::{join, Linear, Parameters};
use crate::s6::ScanMode;
use crate::scan_order::IplConfig;
use crate::sparsify::FeatureMap;
use crate::stca::{downsample_map, SparsificationMap, TokenScoreMap};

pub use gci::{gci_forward, GciParams};
pub use lstm::{convlstm_step, LstmParams, LstmState};
pub use mlp::{dense_mlp, sparse_mlp, MlpParams};
pub use ss2d::{dense_ss2d, sparse_ss2d, Ss2dParams};

pub const STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    /// Input height and width in pixels.
    pub input: (usize, usize),
    pub patch: usize,
    /// Temporal bins per polarity of the voxel grid.
    pub bins: usize,
    pub channels: [usize; STAGES],
    pub state: usize,
    /// Inner width of the scan branch as a multiple of the stage width.
    pub expand: usize,
    pub mlp_ratio: usize,
    pub ipl: IplConfig,
    /// Stages that run global channel interaction.
    pub gci: [bool; STAGES],
    pub scan_mode: ScanMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input: (64, 64),
            patch: 4,
            bins: 10,
            channels: [32, 64, 128, 256],
            state: 16,
            expand: 1,
            mlp_ratio: 4,
            ipl: IplConfig::default(),
            gci: [false, false, true, true],
            scan_mode: ScanMode::Sequential,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.patch > 0
            && self.bins > 0
            && self.state > 0
            && self.expand > 0
            && self.mlp_ratio > 0
            && self.ipl.window > 0
            && self.channels.iter().all(|&c| c > 0);
        if !positive {
            return Err(config_err!("backbone sizes must all be positive"));
        }
        let (h, w) = self.input;
        let stride = self.patch << (STAGES - 1);
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(config_err!("input {h}×{w} must be a positive multiple of {stride} on both sides"));
        }
        for s in 0..STAGES {
            let (r, c) = self.stage_grid(s);
            if r % self.ipl.window != 0 || c % self.ipl.window != 0 {
                return Err(config_err!(
                    "stage {} grid {r}×{c} is not divisible by IPL window {}",
                    s + 1,
                    self.ipl.window
                ));
            }
        }
        Ok(())
    }

    /// Token grid `(rows, cols)` of stage `s` (zero-based).
    pub fn stage_grid(&self, s: usize) -> (usize, usize) {
        let stride = self.patch << s;
        (self.input.0 / stride, self.input.1 / stride)
    }

    pub fn embed_in(&self) -> usize {
        2 * self.bins * self.patch * self.patch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    /// Patch merging projection `4·C_prev → C`; absent on stage 1.
    pub down: Option<Linear>,
    pub ss2d: Ss2dParams,
    pub mlp: MlpParams,
    pub gci: Option<GciParams>,
    pub lstm: LstmParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub embed: Linear,
    pub stages: Vec<StageParams>,
}

impl BackboneParams {
    /// Deterministic random initialization from `seed`.
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Linear::init(config.embed_in(), config.channels[0], 1.0, &mut rng);
        let mut stages = Vec::with_capacity(STAGES);
        for s in 0..STAGES {
            let c = config.channels[s];
            let down = (s > 0).then(|| Linear::init(4 * config.channels[s - 1], c, 1.0, &mut rng));
            let mut ss2d = Ss2dParams::init(c, config.expand * c, config.state, config.ipl, &mut rng);
            ss2d.mode = config.scan_mode;
            let mlp = MlpParams::init(c, config.mlp_ratio, &mut rng);
            let gci = config.gci[s].then(|| {
                let mut g = GciParams::init(c, config.stage_grid(s), config.state, &mut rng);
                g.mode = config.scan_mode;
                g
            });
            let lstm = LstmParams::init(c, &mut rng);
            stages.push(StageParams { down, ss2d, mlp, gci, lstm });
        }
        Ok(Self { config, embed, stages })
    }

    pub fn set_scan_mode(&mut self, mode: ScanMode) {
        self.config.scan_mode = mode;
        for st in &mut self.stages {
            st.ss2d.mode = mode;
            if let Some(g) = &mut st.gci {
                g.mode = mode;
            }
        }
    }

    pub fn initial_state(&self) -> BackboneState {
        let stages = (0..STAGES)
            .map(|s| {
                let (r, c) = self.config.stage_grid(s);
                LstmState::zeros(self.config.channels[s], r, c)
            })
            .collect();
        BackboneState { stages }
    }
}

impl Parameters for BackboneParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.embed.visit(&join(prefix, "embed"), f);
        for (s, st) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stage{}", s + 1));
            if let Some(d) = &st.down {
                d.visit(&join(&sp, "down"), f);
            }
            st.ss2d.visit(&join(&sp, "ss2d"), f);
            st.mlp.visit(&join(&sp, "mlp"), f);
            if let Some(g) = &st.gci {
                g.visit(&join(&sp, "gci"), f);
            }
            st.lstm.visit(&join(&sp, "lstm"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        for (s, st) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stage{}", s + 1));
            if let Some(d) = &mut st.down {
                d.visit_mut(&join(&sp, "down"), f);
            }
            st.ss2d.visit_mut(&join(&sp, "ss2d"), f);
            st.mlp.visit_mut(&join(&sp, "mlp"), f);
            if let Some(g) = &mut st.gci {
                g.visit_mut(&join(&sp, "gci"), f);
            }
            st.lstm.visit_mut(&join(&sp, "lstm"), f);
        }
    }
}

/// Recurrent state carried between event windows, one entry per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneState {
    pub stages: Vec<LstmState>,
}

/// Flattens each `P×P` patch of the voxel grid (channel, row, column order)
/// and projects it to the stage-1 width.
pub fn patch_embed(voxels: &VoxelGrid, patch: usize, embed: &Linear, ops: &mut u64) -> Result<FeatureMap> {
    let (h, w) = (voxels.height(), voxels.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(config_err!("{h}×{w} voxel grid does not tile into {patch}×{patch} patches"));
    }
    let k = voxels.channels() * patch * patch;
    if k != embed.in_dim {
        return Err(shape_err!("patch embedding expects {} inputs per token, voxel patches hold {k}", embed.in_dim));
    }
    let (rows, cols) = (h / patch, w / patch);
    let mut flat = Vec::with_capacity(rows * cols * k);
    for r in 0..rows {
        for c in 0..cols {
            for ch in 0..voxels.channels() {
                for dy in 0..patch {
                    for dx in 0..patch {
                        flat.push(voxels.at(ch, r * patch + dy, c * patch + dx));
                    }
                }
            }
        }
    }
    let tokens = embed.forward(&flat, ops)?;
    FeatureMap::from_tokens(embed.out_dim, rows, cols, &tokens)
}

/// Concatenates each 2×2 block of tokens (top-left, top-right, bottom-left,
/// bottom-right) and projects to the next width.
pub fn merge_patches(x: &FeatureMap, down: &Linear, ops: &mut u64) -> Result<FeatureMap> {
    let (rows, cols) = x.grid_dims();
    let ch = x.channels();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(shape_err!("cannot merge 2×2 patches of a {rows}×{cols} grid"));
    }
    if down.in_dim != 4 * ch {
        return Err(shape_err!("patch merging expects {} inputs, got 4·{ch}", down.in_dim));
    }
    let (r2, c2) = (rows / 2, cols / 2);
    let mut flat = vec![0.0; r2 * c2 * 4 * ch];
    for r in 0..r2 {
        for c in 0..c2 {
            let base = (r * c2 + c) * 4 * ch;
            for (j, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                x.read_token(2 * r + dr, 2 * c + dc, &mut flat[base + j * ch..base + (j + 1) * ch]);
            }
        }
    }
    let tokens = down.forward(&flat, ops)?;
    FeatureMap::from_tokens(down.out_dim, r2, c2, &tokens)
}

/// Keep maps and token scores for every stage, derived from stage-1 inputs.
pub fn stage_maps(
    config: &BackboneConfig,
    map: &SparsificationMap,
    scores: &TokenScoreMap,
) -> Result<Vec<(SparsificationMap, TokenScoreMap)>> {
    let g = config.stage_grid(0);
    if map.dims() != g || scores.dims() != g {
        return Err(shape_err!(
            "stage-1 grid is {g:?}, keep map {:?}, scores {:?}",
            map.dims(),
            scores.dims()
        ));
    }
    let mut out = Vec::with_capacity(STAGES);
    out.push((map.clone(), scores.clone()));
    for s in 1..STAGES {
        let (m, sc) = &out[s - 1];
        let next = (downsample_map(m, 2)?, sc.downsample(2)?);
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    /// Hidden map of each stage.
    pub features: Vec<FeatureMap>,
    pub state: BackboneState,
    pub meter: FlopMeter,
}

enum Route<'a> {
    Sparse(&'a [(SparsificationMap, TokenScoreMap)]),
    Dense(&'a [(SparsificationMap, TokenScoreMap)]),
}

fn run(p: &BackboneParams, voxels: &VoxelGrid, state: &BackboneState, route: Route<'_>) -> Result<BackboneOutput> {
    let cfg = &p.config;
    if voxels.bins() != cfg.bins || (voxels.height(), voxels.width()) != cfg.input {
        return Err(shape_err!(
            "backbone configured for {} bins on {:?}, voxel grid has {} bins on {:?}",
            cfg.bins,
            cfg.input,
            voxels.bins(),
            (voxels.height(), voxels.width())
        ));
    }
    if state.stages.len() != STAGES || p.stages.len() != STAGES {
        return Err(shape_err!("backbone needs {STAGES} stages"));
    }
    let maps = match route {
        Route::Sparse(m) | Route::Dense(m) => m,
    };
    let mut meter = FlopMeter::default();
    let mut record = |stage: usize, kind: BlockKind, ops: u64| meter.add(BlockKey { stage, kind }, ops);

    let mut ops = 0;
    let mut x = patch_embed(voxels, cfg.patch, &p.embed, &mut ops)?;
    record(0, BlockKind::PatchEmbed, ops);

    let mut features = Vec::with_capacity(STAGES);
    let mut next_state = Vec::with_capacity(STAGES);
    for (s, st) in p.stages.iter().enumerate() {
        if let Some(down) = &st.down {
            let mut ops = 0;
            x = merge_patches(&x, down, &mut ops)?;
            record(s, BlockKind::Downsample, ops);
        }
        let (keep, scores) = &maps[s];
        let mut ops = 0;
        x = match route {
            Route::Sparse(_) => sparse_ss2d(&x, keep, scores, &st.ss2d, &mut ops)?,
            Route::Dense(_) => dense_ss2d(&x, scores, &st.ss2d, &mut ops)?,
        };
        record(s, BlockKind::SparseSs2d, ops);
        let mut ops = 0;
        x = match route {
            Route::Sparse(_) => sparse_mlp(&x, keep, &st.mlp, &mut ops)?,
            Route::Dense(_) => dense_mlp(&x, &st.mlp, &mut ops)?,
        };
        record(s, BlockKind::SparseMlp, ops);
        if let Some(g) = &st.gci {
            let mut ops = 0;
            x = gci_forward(&x, g, &mut ops)?;
            record(s, BlockKind::Gci, ops);
        }
        let mut ops = 0;
        let (h, ns) = convlstm_step(&x, &state.stages[s], &st.lstm, &mut ops)?;
        record(s, BlockKind::ConvLstm, ops);
        x = h.clone();
        features.push(h);
        next_state.push(ns);
    }
    Ok(BackboneOutput {
        features,
        state: BackboneState { stages: next_state },
        meter,
    })
}

/// One event window through the sparse backbone. `map` and `scores` are
/// the STCA outputs at stage-1 token resolution.
pub fn backbone_forward(
    p: &BackboneParams,
    voxels: &VoxelGrid,
    map: &SparsificationMap,
    scores: &TokenScoreMap,
    state: &BackboneState,
) -> Result<BackboneOutput> {
    let maps = stage_maps(&p.config, map, scores)?;
    run(p, voxels, state, Route::Sparse(&maps))
}

/// Dense reference: every block processes every token.
pub fn backbone_forward_dense(
    p: &BackboneParams,
    voxels: &VoxelGrid,
    scores: &TokenScoreMap,
    state: &BackboneState,
) -> Result<BackboneOutput> {
    let (r, c) = p.config.stage_grid(0);
    let maps = stage_maps(&p.config, &SparsificationMap::all(r, c, true), scores)?;
    run(p, voxels, state, Route::Dense(&maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::Rng;

    fn small_config() -> BackboneConfig {
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

    fn random_voxels(cfg: &BackboneConfig, seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = VoxelGrid::zeros(cfg.bins, cfg.input.0, cfg.input.1, 1000);
        for x in v.values_mut() {
            if rng.random_bool(0.3) {
                *x = rng.random_range(0.0..2.0);
            }
        }
        v
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = BackboneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_grid(0), (16, 16));
        assert_eq!(cfg.stage_grid(3), (2, 2));
        assert_eq!(cfg.embed_in(), 320);
    }

    #[test]
    fn rejects_untileable_input() {
        let cfg = BackboneConfig { input: (60, 64), ..BackboneConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = BackboneConfig { ipl: IplConfig { window: 4 }, ..BackboneConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn patch_embed_layout() {
        let mut v = VoxelGrid::zeros(1, 4, 4, 10);
        // Channel 1 at pixel (y=2, x=3) lands in token (1, 1), slot 1·4 + 0·2 + 1.
        let idx = v.channel_index(crate::event::Polarity::Negative, 0);
        assert_eq!(idx, 1);
        v.values_mut()[16 + 2 * 4 + 3] = 1.0;
        let mut embed = Linear::zeros(8, 8);
        for i in 0..8 {
            embed.weight[i * 8 + i] = 1.0;
        }
        let mut ops = 0;
        let x = patch_embed(&v, 2, &embed, &mut ops).unwrap();
        assert_eq!(x.at(5, 1, 1), 1.0);
        assert_eq!(x.as_slice().iter().sum::<f64>(), 1.0);
        assert_eq!(ops, embed.ops(4));
    }

    #[test]
    fn merge_patches_layout() {
        let x = FeatureMap::from_fn(1, 2, 2, |_, r, c| (r * 2 + c) as f64);
        let mut down = Linear::zeros(4, 4);
        for i in 0..4 {
            down.weight[i * 4 + i] = 1.0;
        }
        let mut ops = 0;
        let y = merge_patches(&x, &down, &mut ops).unwrap();
        assert_eq!(y.to_tokens(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn all_kept_matches_dense() {
        let cfg = small_config();
        let p = BackboneParams::init(cfg, 11).unwrap();
        let v = random_voxels(&cfg, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (r, c) = cfg.stage_grid(0);
        let scores = TokenScoreMap::new(Grid::from_fn(r, c, |_, _| rng.random_range(0.0..1.0)), cfg.patch);
        let state = p.initial_state();
        let sparse = backbone_forward(&p, &v, &SparsificationMap::all(r, c, true), &scores, &state).unwrap();
        let dense = backbone_forward_dense(&p, &v, &scores, &state).unwrap();
        for (a, b) in sparse.features.iter().zip(&dense.features) {
            for (u, w) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - w).abs() <= 1e-9, "{u} vs {w}");
            }
        }
        assert_eq!(sparse.meter, dense.meter);
    }

    #[test]
    fn state_carries_over() {
        let cfg = small_config();
        let p = BackboneParams::init(cfg, 1).unwrap();
        let v = random_voxels(&cfg, 2);
        let (r, c) = cfg.stage_grid(0);
        let scores = TokenScoreMap::new(Grid::filled(r, c, 1.0), cfg.patch);
        let map = SparsificationMap::all(r, c, true);
        let first = backbone_forward(&p, &v, &map, &scores, &p.initial_state()).unwrap();
        let second = backbone_forward(&p, &v, &map, &scores, &first.state).unwrap();
        assert_ne!(first.features[0], second.features[0]);
    }

    #[test]
    fn parameter_names_are_unique() {
        let p = BackboneParams::init(small_config(), 0).unwrap();
        let mut names = Vec::new();
        p.visit("", &mut |n, _, _| names.push(alloc::string::String::from(n)));
        let count = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), count);
        assert!(names.iter().any(|n| n == "stage3.gci.scan_fwd.log_a"));
        assert!(!names.iter().any(|n| n.starts_with("stage1.down")));
    }

    #[test]
    fn wrong_voxel_shape() {
        let cfg = small_config();
        let p = BackboneParams::init(cfg, 0).unwrap();
        let v = VoxelGrid::zeros(cfg.bins + 1, 32, 32, 10);
        let (r, c) = cfg.stage_grid(0);
        let scores = TokenScoreMap::new(Grid::filled(r, c, 1.0), cfg.patch);
        assert!(backbone_forward_dense(&p, &v, &scores, &p.initial_state()).is_err());
    }
}
