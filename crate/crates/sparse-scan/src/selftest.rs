//! Oracle checks run by the `selftest` subcommand and the acceptance suite.
//!
//! Each check draws its instances from a fixed seed, compares against an
//! independent oracle and reports a single pass/fail outcome.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparse_scan_core::backbone::{
    backbone_forward, backbone_forward_dense, dense_mlp, dense_ss2d, sparse_mlp, sparse_ss2d, BackboneConfig,
    BackboneParams, MlpParams, Ss2dParams,
};
use sparse_scan_core::event::{build_voxel_grid, Event, EventStream, Polarity, SensorGeometry};
use sparse_scan_core::flops::{analytic_meter, BlockKind};
use sparse_scan_core::grid::Grid;
use sparse_scan_core::s6::{
    discretize_zoh, parameterize, selective_scan_backward, selective_scan_parallel, selective_scan_seq, S6Discretized,
    S6Params, ScanState,
};
use sparse_scan_core::scan_order::{ipl_order, IplConfig};
use sparse_scan_core::sparsify::{gather_tokens, scatter_tokens, FeatureMap};
use sparse_scan_core::stca::{gaussian_aggregate, run_stca, GaussianConfig, SparsificationMap, StcaConfig, TokenScoreMap};
use sparse_scan_core::synth::{generate_synthetic_scene, generate_token_scene, SceneSpec, TokenSceneSpec};

use crate::pipeline::run_windows;

pub const SCAN_REL_TOL: f64 = 1e-9;
pub const SCAN_INSTANCES: usize = 100;
pub const SCAN_BUDGET: Duration = Duration::from_secs(5);
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_INSTANCES: usize = 20;
pub const GRAD_BUDGET: Duration = Duration::from_secs(10);
pub const ZOH_TOL: f64 = 1e-12;
pub const ZOH_CONTINUITY_TOL: f64 = 1e-8;
pub const SCALING_SCENES: usize = 50;
pub const SCALE_FACTORS: [f64; 3] = [0.5, 2.0, 10.0];
pub const SEPARATION_SEEDS: u64 = 20;
pub const MIN_RECALL: f64 = 0.95;
pub const MAX_NOISE_KEEP: f64 = 0.20;
pub const MIN_SEPARATION: f64 = 5.0;
pub const IPL_TRIPLES: usize = 1000;
pub const ROUNDTRIP_PAIRS: usize = 1000;
pub const PASSTHROUGH_PAIRS: usize = 50;
pub const DENSE_REL_TOL: f64 = 1e-6;
pub const FLOP_RATIO_TOL: f64 = 0.02;
pub const REDUCTION_RANGE: (f64, f64) = (0.20, 0.35);
pub const SPATIAL_RATIO_RANGE: (f64, f64) = (0.25, 0.35);
pub const GAUSS_CONST_TOL: f64 = 1e-12;
pub const GAUSS_CENTRE: f64 = 0.20418;
pub const GAUSS_CENTRE_TOL: f64 = 1e-5;
pub const SUITE_BUDGET: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `‖a − b‖∞ / ‖b‖∞`, with an absolute fallback when `b` is zero.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn core_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn check_scan_equivalence() -> Outcome {
    timed(1, "parallel scan equals sequential scan", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1);
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        for _ in 0..SCAN_INSTANCES {
            let t = rng.random_range(1..=512);
            let l = rng.random_range(1..=16);
            let n = rng.random_range(1..=16);
            let p = S6Params::init(l, n, &mut rng);
            let x = random_vec(&mut rng, t * l, -2.0, 2.0);
            let d = parameterize(&x, &p).map_err(core_err)?;
            let h0 = ScanState {
                lanes: l,
                state: n,
                h: random_vec(&mut rng, l * n, -1.0, 1.0),
            };
            let (ys, hs) = selective_scan_seq(&d, &h0, &p.skip, &x);
            let (yp, hp) = selective_scan_parallel(&d, &h0, &p.skip, &x);
            worst = worst.max(rel_err(&yp, &ys)).max(rel_err(&hp.h, &hs.h));
        }
        let took = start.elapsed();
        let detail = format!("max rel err {worst:.2e} over {SCAN_INSTANCES} instances in {:.2} s", took.as_secs_f64());
        ensure(worst <= SCAN_REL_TOL && took < SCAN_BUDGET, || detail.clone())?;
        Ok(detail)
    })
}

fn scan_loss(d: &S6Discretized, h0: &ScanState, skip: &[f64], x: &[f64], dy: &[f64]) -> f64 {
    let (y, _) = selective_scan_seq(d, h0, skip, x);
    y.iter().zip(dy).map(|(a, b)| a * b).sum()
}

/// Central differences of the loss with respect to one buffer.
fn finite_difference(len: usize, mut eval: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..len)
        .map(|i| (eval(i, GRAD_STEP) - eval(i, -GRAD_STEP)) / (2.0 * GRAD_STEP))
        .collect()
}

pub fn check_gradients() -> Outcome {
    timed(2, "adjoint gradients match central differences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a4d);
        let start = Instant::now();
        let (t, n) = (32, 4);
        let mut worst = [0.0f64; 5];
        for _ in 0..GRAD_INSTANCES {
            let l = rng.random_range(1..=4);
            let m = t * l * n;
            let d = S6Discretized {
                len: t,
                lanes: l,
                state: n,
                a_bar: random_vec(&mut rng, m, 0.05, 0.99),
                bx: random_vec(&mut rng, m, -1.0, 1.0),
                c: random_vec(&mut rng, t * n, -1.0, 1.0),
            };
            let h0 = ScanState {
                lanes: l,
                state: n,
                h: random_vec(&mut rng, l * n, -1.0, 1.0),
            };
            let skip = random_vec(&mut rng, l, -1.0, 1.0);
            let x = random_vec(&mut rng, t * l, -1.0, 1.0);
            let dy = random_vec(&mut rng, t * l, -1.0, 1.0);
            let g = selective_scan_backward(&d, &h0, &x, &dy);

            let fd_a = finite_difference(m, |i, h| {
                let mut e = d.clone();
                e.a_bar[i] += h;
                scan_loss(&e, &h0, &skip, &x, &dy)
            });
            let fd_b = finite_difference(m, |i, h| {
                let mut e = d.clone();
                e.bx[i] += h;
                scan_loss(&e, &h0, &skip, &x, &dy)
            });
            let fd_c = finite_difference(t * n, |i, h| {
                let mut e = d.clone();
                e.c[i] += h;
                scan_loss(&e, &h0, &skip, &x, &dy)
            });
            let fd_skip = finite_difference(l, |i, h| {
                let mut s = skip.clone();
                s[i] += h;
                scan_loss(&d, &h0, &s, &x, &dy)
            });
            let fd_h0 = finite_difference(l * n, |i, h| {
                let mut s = h0.clone();
                s.h[i] += h;
                scan_loss(&d, &s, &skip, &x, &dy)
            });
            for (k, (an, fd)) in [
                (&g.a_bar, &fd_a),
                (&g.bx, &fd_b),
                (&g.c, &fd_c),
                (&g.skip, &fd_skip),
                (&g.h0, &fd_h0),
            ]
            .into_iter()
            .enumerate()
            {
                worst[k] = worst[k].max(rel_err(an, fd));
            }
        }
        let took = start.elapsed();
        let detail = format!(
            "max rel err a_bar {:.1e}, bx {:.1e}, c {:.1e}, skip {:.1e}, h0 {:.1e} in {:.2} s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            took.as_secs_f64()
        );
        ensure(worst.iter().all(|&w| w <= GRAD_REL_TOL) && took < GRAD_BUDGET, || detail.clone())?;
        Ok(detail)
    })
}

pub fn check_zoh() -> Outcome {
    timed(3, "zero-order hold closed forms and series continuity", || {
        let cases = [
            (-1.0, 2.0, std::f64::consts::LN_2, 0.5, 1.0),
            (-2.0, 1.0, 1.0, (-2.0f64).exp(), (1.0 - (-2.0f64).exp()) / 2.0),
            (-0.5, 3.0, 4.0, (-2.0f64).exp(), (1.0 - (-2.0f64).exp()) * 6.0),
            (-3.0, -1.5, 0.25, (-0.75f64).exp(), -1.5 * (1.0 - (-0.75f64).exp()) / 3.0),
        ];
        let mut worst: f64 = 0.0;
        for (a, b, delta, want_a, want_b) in cases {
            let (ga, gb) = discretize_zoh(a, b, delta);
            worst = worst.max((ga - want_a).abs()).max((gb - want_b).abs());
        }
        // At |Δa| = 1e-9 the series branch must agree with the exact value
        // Δ·b·expm1(Δa)/(Δa) and with its a → 0 limit Δ·b.
        let mut cont: f64 = 0.0;
        for (a, delta, b) in [(-1e-9, 1.0, 1.0), (1e-9, 1.0, 2.5), (-1e-3, 1e-6, -0.7), (-4.0, 2.5e-10, 3.0)] {
            let da: f64 = delta * a;
            let (_, gb) = discretize_zoh(a, b, delta);
            let exact = delta * b * (da.exp_m1() / da);
            let limit = delta * b;
            cont = cont.max(((gb - exact) / exact).abs()).max(((gb - limit) / limit).abs());
        }
        let detail = format!("max closed-form err {worst:.1e}, max continuity rel err {cont:.1e}");
        ensure(worst <= ZOH_TOL && cont <= ZOH_CONTINUITY_TOL, || detail.clone())?;
        Ok(detail)
    })
}

/// A random stream with even timestamps, so that halving stays integral.
fn random_even_stream(rng: &mut ChaCha8Rng) -> EventStream {
    let w = 4 * rng.random_range(2..=12u16);
    let h = 4 * rng.random_range(2..=12u16);
    let start = 2 * rng.random_range(0..50_000u64);
    let span = 2 * rng.random_range(1..200_000u64);
    let n = rng.random_range(0..600);
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            let t = start + 2 * rng.random_range(0..=span / 2);
            let p = if rng.random() { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..w), rng.random_range(0..h), t, p)
        })
        .collect();
    events.sort_by_key(|e| e.t);
    EventStream::new(events, SensorGeometry::new(w, h), start, start + span).expect("valid by construction")
}

fn scale_stream(s: &EventStream, factor: f64) -> EventStream {
    let scale = |t: u64| (t as f64 * factor) as u64;
    let events = s
        .events()
        .iter()
        .map(|e| Event::new(e.x, e.y, scale(e.t), e.p))
        .collect();
    EventStream::new(events, s.geometry(), scale(s.window_start()), scale(s.window_end())).expect("monotone rescale")
}

pub fn check_stca_scaling() -> Outcome {
    timed(4, "keep map is invariant to timestamp scaling", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57ca);
        let cfg = StcaConfig::default();
        for i in 0..SCALING_SCENES {
            let s = random_even_stream(&mut rng);
            let base = run_stca(&s, &cfg).map_err(core_err)?;
            for factor in SCALE_FACTORS {
                let scaled = run_stca(&scale_stream(&s, factor), &cfg).map_err(core_err)?;
                ensure(scaled.map.keep == base.map.keep, || {
                    format!("scene {i}: keep map changed under scale {factor}")
                })?;
            }
        }
        Ok(format!("{SCALING_SCENES} scenes × {} factors bit-identical", SCALE_FACTORS.len()))
    })
}

/// Direct per-token recomputation of the keep decision from the event list.
fn brute_force_stca(stream: &EventStream, patch: usize, sigma: f64, radius: usize, beta: f64) -> (Vec<f64>, Vec<bool>) {
    let (rows, cols) = (stream.height() / patch, stream.width() / patch);
    let span = stream.span() as f64;
    let mut raw = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut sum = 0.0;
            for e in stream.events() {
                if e.y as usize / patch == r && e.x as usize / patch == c {
                    sum += (e.t - stream.window_start()) as f64 / span;
                }
            }
            raw[r * cols + c] = sum / (patch * patch) as f64;
        }
    }
    let rad = radius as i64;
    let mut smooth = vec![0.0; rows * cols];
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let (y, x) = (r + dy, c + dx);
                    if y < 0 || x < 0 || y >= rows as i64 || x >= cols as i64 {
                        continue;
                    }
                    let w = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                    acc += w * raw[y as usize * cols + x as usize];
                    wsum += w;
                }
            }
            smooth[r as usize * cols + c as usize] = acc / wsum;
        }
    }
    let alpha = smooth.iter().sum::<f64>() / (beta * smooth.len() as f64);
    let keep = smooth.iter().map(|&s| s >= alpha).collect();
    (raw, keep)
}

pub fn check_stca_separation() -> Outcome {
    timed(5, "STCA keeps object tokens and drops isolated noise", || {
        let spec = TokenSceneSpec::default();
        let cfg = StcaConfig::default();
        let (mut recall, mut noise_keep) = (0.0, 0.0);
        let mut min_sep = f64::INFINITY;
        for seed in 0..SEPARATION_SEEDS {
            let scene = generate_token_scene(&spec, seed).map_err(core_err)?;
            let out = run_stca(&scene.stream, &cfg).map_err(core_err)?;
            let (raw, oracle_keep) = brute_force_stca(&scene.stream, cfg.patch, cfg.gaussian.sigma, cfg.gaussian.radius, cfg.beta);
            ensure(out.map.keep.as_slice() == oracle_keep.as_slice(), || {
                format!("seed {seed}: keep map differs from the brute-force oracle")
            })?;
            let (mut obj, mut obj_kept, mut noise, mut noise_kept) = (0, 0, 0, 0);
            let (mut obj_min, mut noise_max) = (f64::INFINITY, 0.0f64);
            for (i, &k) in oracle_keep.iter().enumerate() {
                if scene.object_tokens.as_slice()[i] {
                    obj += 1;
                    obj_kept += k as usize;
                    obj_min = obj_min.min(raw[i]);
                } else if scene.noise_tokens.as_slice()[i] {
                    noise += 1;
                    noise_kept += k as usize;
                    noise_max = noise_max.max(raw[i]);
                }
            }
            recall += obj_kept as f64 / obj as f64;
            noise_keep += if noise == 0 { 0.0 } else { noise_kept as f64 / noise as f64 };
            if noise_max > 0.0 {
                min_sep = min_sep.min(obj_min / noise_max);
            }
        }
        let n = SEPARATION_SEEDS as f64;
        let (recall, noise_keep) = (recall / n, noise_keep / n);
        let detail = format!(
            "recall {recall:.3}, noise keep {noise_keep:.3}, min raw score separation {min_sep:.1}× over {SEPARATION_SEEDS} seeds"
        );
        ensure(recall >= MIN_RECALL && noise_keep <= MAX_NOISE_KEEP && min_sep >= MIN_SEPARATION, || detail.clone())?;
        Ok(detail)
    })
}

pub fn check_ipl() -> Outcome {
    timed(6, "IPL order properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1b1);
        for trial in 0..IPL_TRIPLES {
            let k = rng.random_range(1..=4);
            let (wr, wc) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let (rows, cols) = (wr * k, wc * k);
            // Coarse levels produce ties between windows.
            let levels = rng.random_range(1..=6);
            let scores = TokenScoreMap::new(Grid::from_fn(rows, cols, |_, _| rng.random_range(0..levels) as f64), 4);
            let density = rng.random_range(0.0..=1.0);
            let keep = Grid::from_fn(rows, cols, |_, _| rng.random_bool(density));
            let map = SparsificationMap { keep, threshold: 0.0, beta: None };
            let ts = gather_tokens(&FeatureMap::zeros(1, rows, cols), &map).map_err(core_err)?;
            let order = ipl_order(&ts, &scores, &IplConfig { window: k }).map_err(core_err)?;
            let order = order.as_slice();
            let fail = |what: &str| format!("triple {trial} ({rows}×{cols}, k={k}): {what}");

            let mut seen = vec![false; ts.len()];
            for &i in order {
                ensure(i < ts.len() && !seen[i], || fail("not a bijection"))?;
                seen[i] = true;
            }
            ensure(order.len() == ts.len(), || fail("not a bijection"))?;

            let window_of = |i: usize| {
                let (r, c) = ts.coords()[i];
                (r / k) * wc + c / k
            };
            let window_max = |w: usize| {
                let (r0, c0) = ((w / wc) * k, (w % wc) * k);
                let mut m = f64::NEG_INFINITY;
                for r in r0..r0 + k {
                    for c in c0..c0 + k {
                        m = m.max(*scores.values.get(r, c));
                    }
                }
                m
            };
            let visits: Vec<usize> = order.iter().map(|&i| window_of(i)).collect();
            let mut finished = vec![false; wr * wc];
            for pair in visits.windows(2) {
                if pair[0] != pair[1] {
                    ensure(!finished[pair[1]], || fail("window visited twice"))?;
                    finished[pair[0]] = true;
                    ensure(window_max(pair[0]) >= window_max(pair[1]), || fail("window maxima increase"))?;
                }
            }
            if let Some(&first) = visits.first() {
                let best = visits.iter().map(|&w| window_max(w)).fold(f64::NEG_INFINITY, f64::max);
                ensure(window_max(first) == best, || fail("first window is not the maximum"))?;
                let global = (0..wr * wc).map(window_max).fold(f64::NEG_INFINITY, f64::max);
                let global_first = (0..wr * wc).find(|&w| window_max(w) == global).expect("non-empty");
                let has_kept = visits.contains(&global_first);
                ensure(!has_kept || first == global_first, || fail("global-max window not visited first"))?;
            }
            // Row-major inside each window.
            for pair in order.windows(2) {
                if window_of(pair[0]) == window_of(pair[1]) {
                    ensure(ts.coords()[pair[0]] < ts.coords()[pair[1]], || fail("window interior not row-major"))?;
                }
            }
        }
        Ok(format!("{IPL_TRIPLES} random triples"))
    })
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> SparsificationMap {
    let density = rng.random_range(0.0..=1.0);
    SparsificationMap {
        keep: Grid::from_fn(rows, cols, |_, _| rng.random_bool(density)),
        threshold: 0.0,
        beta: None,
    }
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn check_gather_scatter() -> Outcome {
    timed(7, "gather/scatter round trip and passthrough", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a7);
        for i in 0..ROUNDTRIP_PAIRS {
            let (c, rows, cols) = (rng.random_range(1..=8), rng.random_range(1..=12), rng.random_range(1..=12));
            let x = FeatureMap::from_fn(c, rows, cols, |_, _, _| rng.random_range(-1e3..1e3));
            let map = random_map(&mut rng, rows, cols);
            let ts = gather_tokens(&x, &map).map_err(core_err)?;
            let back = scatter_tokens(&ts, &x).map_err(core_err)?;
            ensure(bits_equal(back.as_slice(), x.as_slice()), || format!("pair {i}: round trip changed bits"))?;
            let onto_zero = scatter_tokens(&ts, &FeatureMap::zeros(c, rows, cols)).map_err(core_err)?;
            for (r, q, &k) in map.keep.iter_indexed() {
                for ch in 0..c {
                    let want = if k { x.at(ch, r, q) } else { 0.0 };
                    ensure(onto_zero.at(ch, r, q).to_bits() == want.to_bits(), || {
                        format!("pair {i}: scatter wrote outside the kept set")
                    })?;
                }
            }
        }
        for i in 0..PASSTHROUGH_PAIRS {
            let c = rng.random_range(2..=8);
            let (rows, cols) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
            let x = FeatureMap::from_fn(c, rows, cols, |_, _, _| rng.random_range(-2.0..2.0));
            let map = random_map(&mut rng, rows, cols);
            let scores = TokenScoreMap::new(Grid::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0)), 4);
            let ss2d = Ss2dParams::init(c, c, 4, IplConfig::default(), &mut rng);
            let mlp = MlpParams::init(c, 4, &mut rng);
            let mut ops = 0;
            let y1 = sparse_ss2d(&x, &map, &scores, &ss2d, &mut ops).map_err(core_err)?;
            let y2 = sparse_mlp(&x, &map, &mlp, &mut ops).map_err(core_err)?;
            for (r, q, &k) in map.keep.iter_indexed() {
                if k {
                    continue;
                }
                for ch in 0..c {
                    let xin = x.at(ch, r, q).to_bits();
                    ensure(y1.at(ch, r, q).to_bits() == xin && y2.at(ch, r, q).to_bits() == xin, || {
                        format!("pair {i}: discarded token ({r}, {q}) changed")
                    })?;
                }
            }
        }
        Ok(format!(
            "{ROUNDTRIP_PAIRS} round trips bit-exact, passthrough exact on {PASSTHROUGH_PAIRS} pairs per sparse block"
        ))
    })
}

/// The default backbone on the `edge-noise` preset, seed 0.
fn desk_inputs(
    scan_seed: u64,
) -> Result<(BackboneParams, sparse_scan_core::event::VoxelGrid, sparse_scan_core::stca::StcaOutput), String> {
    let cfg = BackboneConfig::default();
    let params = BackboneParams::init(cfg, scan_seed).map_err(core_err)?;
    let scene = generate_synthetic_scene(&SceneSpec::preset("edge-noise").expect("preset"), 0).map_err(core_err)?;
    let voxels = build_voxel_grid(&scene.stream, cfg.bins).map_err(core_err)?;
    let stca = run_stca(&scene.stream, &StcaConfig::default()).map_err(core_err)?;
    Ok((params, voxels, stca))
}

pub fn check_dense_consistency() -> Outcome {
    timed(8, "all-kept sparse path matches the dense path", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xde5e);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let c = rng.random_range(2..=16);
            let (rows, cols) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
            let x = FeatureMap::from_fn(c, rows, cols, |_, _, _| rng.random_range(-2.0..2.0));
            let scores = TokenScoreMap::new(Grid::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0)), 4);
            let all = SparsificationMap::all(rows, cols, true);
            let ss2d = Ss2dParams::init(c, c, 4, IplConfig::default(), &mut rng);
            let mlp = MlpParams::init(c, 4, &mut rng);
            let mut ops = 0;
            let a = sparse_ss2d(&x, &all, &scores, &ss2d, &mut ops).map_err(core_err)?;
            let b = dense_ss2d(&x, &scores, &ss2d, &mut ops).map_err(core_err)?;
            worst = worst.max(rel_err(a.as_slice(), b.as_slice()));
            let a = sparse_mlp(&x, &all, &mlp, &mut ops).map_err(core_err)?;
            let b = dense_mlp(&x, &mlp, &mut ops).map_err(core_err)?;
            worst = worst.max(rel_err(a.as_slice(), b.as_slice()));
        }
        let (params, voxels, stca) = desk_inputs(1)?;
        let (r, c) = params.config.stage_grid(0);
        let state = params.initial_state();
        let sparse = backbone_forward(&params, &voxels, &SparsificationMap::all(r, c, true), &stca.scores, &state)
            .map_err(core_err)?;
        let dense = backbone_forward_dense(&params, &voxels, &stca.scores, &state).map_err(core_err)?;
        let mut full: f64 = 0.0;
        for (a, b) in sparse.features.iter().zip(&dense.features) {
            full = full.max(rel_err(a.as_slice(), b.as_slice()));
        }
        let detail = format!("max block rel err {worst:.1e}, full 64×64 backbone rel err {full:.1e}");
        ensure(worst <= DENSE_REL_TOL && full <= DENSE_REL_TOL, || detail.clone())?;
        Ok(detail)
    })
}

pub fn check_flops() -> Outcome {
    timed(9, "FLOP ratios follow kept ratios; end-to-end reduction", || {
        let cfg = BackboneConfig::default();
        let params = BackboneParams::init(cfg, 2).map_err(core_err)?;
        let scene = generate_synthetic_scene(&SceneSpec::preset("edge-noise").expect("preset"), 0).map_err(core_err)?;
        let spatial = scene.stream.spatial_ratio();
        let (windows, _) = run_windows(&params, &scene.stream, &StcaConfig::default(), 1).map_err(core_err)?;
        let report = &windows[0].report;
        let mut worst: f64 = 0.0;
        for b in report.blocks.iter().filter(|b| b.key.kind.is_token_wise()) {
            let kept = report.kept_ratios[b.key.stage];
            let dev = if kept == 0.0 { b.ratio() } else { (b.ratio() / kept - 1.0).abs() };
            worst = worst.max(dev);
        }
        // Measured counts against the closed forms, kept and all-kept.
        let kept: [usize; 4] = std::array::from_fn(|s| {
            let (r, c) = cfg.stage_grid(s);
            (report.kept_ratios[s] * (r * c) as f64).round() as usize
        });
        let full: [usize; 4] = std::array::from_fn(|s| {
            let (r, c) = cfg.stage_grid(s);
            r * c
        });
        let sparse = analytic_meter(&cfg, &kept).map_err(core_err)?;
        let dense = analytic_meter(&cfg, &full).map_err(core_err)?;
        for b in &report.blocks {
            ensure(b.sparse == sparse.get(b.key) && b.dense == dense.get(b.key), || {
                format!("stage {} {}: measured counts differ from the closed form", b.key.stage + 1, b.key.kind.name())
            })?;
        }
        let tw = report
            .blocks
            .iter()
            .filter(|b| b.key.kind == BlockKind::SparseSs2d || b.key.kind == BlockKind::SparseMlp)
            .count();
        let reduction = report.reduction();
        let detail = format!(
            "{tw} token-wise blocks, max ratio deviation {:.2}%, spatial ratio {spatial:.3}, kept ratios {:?}, reduction {:.1}%",
            100.0 * worst,
            report.kept_ratios.map(|r| (r * 1000.0).round() / 1000.0),
            100.0 * reduction
        );
        ensure(
            worst <= FLOP_RATIO_TOL
                && (SPATIAL_RATIO_RANGE.0..=SPATIAL_RATIO_RANGE.1).contains(&spatial)
                && (REDUCTION_RANGE.0..=REDUCTION_RANGE.1).contains(&reduction),
            || detail.clone(),
        )?;
        Ok(detail)
    })
}

pub fn check_gaussian() -> Outcome {
    timed(10, "Gaussian aggregation constants", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a55);
        let g = GaussianConfig::default();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (rows, cols) = (rng.random_range(1..=9), rng.random_range(1..=9));
            let v = rng.random_range(-5.0..5.0);
            let out = gaussian_aggregate(&TokenScoreMap::new(Grid::filled(rows, cols, v), 4), &g).map_err(core_err)?;
            for &o in out.values.as_slice() {
                worst = worst.max(((o - v) / v).abs());
            }
        }
        let mut centre_err: f64 = 0.0;
        for v in [1.0, 3.7] {
            let delta = Grid::from_fn(5, 5, |r, c| if (r, c) == (2, 2) { v } else { 0.0 });
            let out = gaussian_aggregate(&TokenScoreMap::new(delta, 4), &g).map_err(core_err)?;
            centre_err = centre_err.max((out.values.get(2, 2) - GAUSS_CENTRE * v).abs() / v);
        }
        let detail = format!("constant-map rel err {worst:.1e}, centre weight err {centre_err:.1e}");
        ensure(worst <= GAUSS_CONST_TOL && centre_err <= GAUSS_CENTRE_TOL, || detail.clone())?;
        Ok(detail)
    })
}

pub const CHECKS: [fn() -> Outcome; 10] = [
    check_scan_equivalence,
    check_gradients,
    check_zoh,
    check_stca_scaling,
    check_stca_separation,
    check_ipl,
    check_gather_scatter,
    check_dense_consistency,
    check_flops,
    check_gaussian,
];

/// Runs every check in order, then the wall-clock budget of the whole run.
pub fn run_all(mut on_outcome: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let start = Instant::now();
    let mut out = Vec::with_capacity(CHECKS.len() + 1);
    for check in CHECKS {
        let o = check();
        on_outcome(&o);
        out.push(o);
    }
    let total = start.elapsed();
    let budget = Outcome {
        id: 11,
        name: "full suite within budget",
        passed: total < SUITE_BUDGET,
        detail: format!("{:.2} s of {} s", total.as_secs_f64(), SUITE_BUDGET.as_secs()),
        elapsed: total,
    };
    on_outcome(&budget);
    out.push(budget);
    out
}
