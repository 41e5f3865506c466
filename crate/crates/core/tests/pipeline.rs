use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparse_scan_core::backbone::{backbone_forward, stage_maps, BackboneConfig, BackboneParams};
use sparse_scan_core::event::{build_voxel_grid, Event, EventStream, Polarity, SensorGeometry};
use sparse_scan_core::flops::{analytic_meter, count_analytic, measure, BlockKind};
use sparse_scan_core::grid::Grid;
use sparse_scan_core::scan_order::{ipl_order, IplConfig};
use sparse_scan_core::sparsify::{gather_tokens, FeatureMap};
use sparse_scan_core::stca::{run_stca, SparsificationMap, StcaConfig, TokenScoreMap};
use sparse_scan_core::synth::{generate_synthetic_scene, SceneSpec};

fn stream_from(raw: Vec<(u16, u16, u64, bool)>, w: u16, h: u16) -> EventStream {
    let mut events: Vec<Event> = raw
        .into_iter()
        .map(|(x, y, t, p)| Event::new(x % w, y % h, t, if p { Polarity::Positive } else { Polarity::Negative }))
        .collect();
    events.sort_by_key(|e| e.t);
    let end = events.last().map_or(1, |e| e.t.max(1));
    EventStream::new(events, SensorGeometry::new(w, h), 0, end).unwrap()
}

fn small_config() -> BackboneConfig {
    BackboneConfig {
        input: (32, 32),
        patch: 2,
        bins: 3,
        channels: [4, 6, 8, 8],
        state: 2,
        mlp_ratio: 2,
        ..BackboneConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn voxel_mass_equals_event_count(
        raw in prop::collection::vec((0u16..16, 0u16..16, 0u64..10_000, any::<bool>()), 1..200),
        bins in 1usize..12,
    ) {
        let s = stream_from(raw, 16, 16);
        let v = build_voxel_grid(&s, bins).unwrap();
        prop_assert!((v.total() - s.len() as f64).abs() <= 1e-9 * s.len() as f64);
    }

    #[test]
    fn larger_beta_keeps_a_superset(
        raw in prop::collection::vec((0u16..32, 0u16..32, 0u64..50_000, any::<bool>()), 1..300),
        beta in 0.2f64..3.0,
    ) {
        let s = stream_from(raw, 32, 32);
        let low = run_stca(&s, &StcaConfig { beta, ..StcaConfig::default() }).unwrap();
        let high = run_stca(&s, &StcaConfig { beta: beta * 1.5, ..StcaConfig::default() }).unwrap();
        for (a, b) in low.map.keep.as_slice().iter().zip(high.map.keep.as_slice()) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn coarse_maps_follow_fine_maps(keep in prop::collection::vec(any::<bool>(), 256)) {
        let cfg = BackboneConfig::default();
        let map = SparsificationMap { keep: Grid::from_vec(16, 16, keep).unwrap(), threshold: 0.0, beta: None };
        let scores = TokenScoreMap::new(Grid::filled(16, 16, 0.0), 4);
        let maps = stage_maps(&cfg, &map, &scores).unwrap();
        for s in 1..4 {
            let (fine, coarse) = (&maps[s - 1].0.keep, &maps[s].0.keep);
            for (r, c, &k) in coarse.iter_indexed() {
                let any = (0..2).any(|i| (0..2).any(|j| *fine.get(2 * r + i, 2 * c + j)));
                prop_assert_eq!(k, any);
            }
        }
    }

    #[test]
    fn ipl_is_a_permutation(
        keep in prop::collection::vec(any::<bool>(), 36),
        scores in prop::collection::vec(0u8..4, 36),
        k in prop::sample::select(vec![1usize, 2, 3, 6]),
    ) {
        let map = SparsificationMap { keep: Grid::from_vec(6, 6, keep).unwrap(), threshold: 0.0, beta: None };
        let ts = gather_tokens(&FeatureMap::zeros(1, 6, 6), &map).unwrap();
        let sc = TokenScoreMap::new(Grid::from_vec(6, 6, scores.into_iter().map(f64::from).collect()).unwrap(), 4);
        let order = ipl_order(&ts, &sc, &IplConfig { window: k }).unwrap();
        let mut sorted = order.as_slice().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..ts.len()).collect::<Vec<_>>());
    }

    #[test]
    fn measured_counts_equal_closed_forms(keep in prop::collection::vec(any::<bool>(), 256), seed in 0u64..1000) {
        let cfg = small_config();
        let p = BackboneParams::init(cfg, seed).unwrap();
        let map = SparsificationMap { keep: Grid::from_vec(16, 16, keep).unwrap(), threshold: 0.0, beta: None };
        let scores = TokenScoreMap::new(Grid::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 5) as f64), cfg.patch);
        let v = sparse_scan_core::event::VoxelGrid::zeros(cfg.bins, 32, 32, 10);
        let report = measure(&p, &v, &map, &scores, &p.initial_state()).unwrap();
        let maps = stage_maps(&cfg, &map, &scores).unwrap();
        let kept: [usize; 4] = std::array::from_fn(|s| maps[s].0.kept_count());
        let closed = analytic_meter(&cfg, &kept).unwrap();
        for b in &report.blocks {
            prop_assert_eq!(b.sparse, closed.get(b.key));
            prop_assert!(b.sparse <= b.dense);
            if b.key.kind.is_token_wise() {
                let want = report.kept_ratios[b.key.stage];
                prop_assert!((b.ratio() - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn empty_keep_map_zeroes_token_wise_counters() {
    let cfg = small_config();
    let p = BackboneParams::init(cfg, 0).unwrap();
    let v = sparse_scan_core::event::VoxelGrid::zeros(cfg.bins, 32, 32, 10);
    let scores = TokenScoreMap::new(Grid::filled(16, 16, 0.0), cfg.patch);
    let report = measure(&p, &v, &SparsificationMap::all(16, 16, false), &scores, &p.initial_state()).unwrap();
    for b in report.blocks.iter().filter(|b| b.key.kind.is_token_wise()) {
        assert_eq!(b.sparse, 0);
    }
    assert!(report.blocks.iter().any(|b| b.key.kind == BlockKind::ConvLstm && b.sparse > 0));
}

#[test]
fn reduction_is_zero_when_everything_is_kept() {
    let report = count_analytic(&BackboneConfig::default(), &[1.0; 4]).unwrap();
    assert_eq!(report.reduction(), 0.0);
}

#[test]
fn token_wise_reduction_ignores_channel_scaling() {
    let base = BackboneConfig::default();
    let wide = BackboneConfig { channels: base.channels.map(|c| 2 * c), ..base };
    let ratios = [0.3, 0.45, 0.6, 0.8];
    let tw = |cfg: &BackboneConfig| {
        let r = count_analytic(cfg, &ratios).unwrap();
        r.token_wise_sparse() as f64 / r.token_wise_dense() as f64
    };
    let per_block = |cfg: &BackboneConfig| -> Vec<f64> {
        count_analytic(cfg, &ratios)
            .unwrap()
            .blocks
            .iter()
            .filter(|b| b.key.kind.is_token_wise())
            .map(|b| b.ratio())
            .collect()
    };
    assert_eq!(per_block(&base), per_block(&wide));
    assert!(tw(&base) > 0.0 && tw(&base) < 1.0);
}

#[test]
fn preset_scene_lands_in_reduction_bracket() {
    let cfg = BackboneConfig::default();
    let mut reductions = Vec::new();
    for seed in 0..4 {
        let scene = generate_synthetic_scene(&SceneSpec::preset("edge-noise").unwrap(), seed).unwrap();
        let spatial = scene.stream.spatial_ratio();
        assert!((0.25..=0.35).contains(&spatial), "spatial ratio {spatial}");
        let out = run_stca(&scene.stream, &StcaConfig::default()).unwrap();
        let maps = stage_maps(&cfg, &out.map, &out.scores).unwrap();
        let ratios: [f64; 4] = std::array::from_fn(|s| maps[s].0.kept_ratio());
        reductions.push(count_analytic(&cfg, &ratios).unwrap().reduction());
    }
    for r in reductions {
        assert!((0.20..=0.35).contains(&r), "reduction {r}");
    }
}

#[test]
fn random_keep_ratio_tracks_bernoulli_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = 0.3;
    let n = 64 * 64;
    let map = SparsificationMap { keep: Grid::from_fn(64, 64, |_, _| rng.random_bool(p)), threshold: 0.0, beta: None };
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((map.kept_ratio() - p).abs() <= 4.0 * sigma);
}

#[test]
fn sparse_forward_is_deterministic() {
    let cfg = small_config();
    let p = BackboneParams::init(cfg, 9).unwrap();
    let scene = generate_synthetic_scene(
        &SceneSpec { geometry: SensorGeometry::new(32, 32), ..SceneSpec::preset("noise").unwrap() },
        3,
    )
    .unwrap();
    let v = build_voxel_grid(&scene.stream, cfg.bins).unwrap();
    let out = run_stca(&scene.stream, &StcaConfig { patch: 2, ..StcaConfig::default() }).unwrap();
    let a = backbone_forward(&p, &v, &out.map, &out.scores, &p.initial_state()).unwrap();
    let b = backbone_forward(&p, &v, &out.map, &out.scores, &p.initial_state()).unwrap();
    assert_eq!(a, b);
}
