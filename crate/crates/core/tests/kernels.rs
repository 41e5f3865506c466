use proptest::prelude::*;
use sparse_scan_core::s6::{
    combine, discretize_zoh, parameterize, selective_scan_backward, selective_scan_parallel, selective_scan_seq,
    S6Discretized, S6Params, ScanMode, ScanState,
};

fn discretized(t: usize, l: usize, n: usize, seed: Vec<f64>) -> S6Discretized {
    let m = t * l * n;
    let pick = |i: usize| seed[i % seed.len()];
    S6Discretized {
        len: t,
        lanes: l,
        state: n,
        a_bar: (0..m).map(|i| 0.5 + 0.49 * pick(i).sin()).collect(),
        bx: (0..m).map(|i| pick(i + 7).cos()).collect(),
        c: (0..t * n).map(|i| pick(i + 3)).collect(),
    }
}

/// Plain loop over time, lane and state, written without slices.
fn naive(d: &S6Discretized, h0: &[f64], skip: &[f64], x: &[f64]) -> Vec<f64> {
    let (l, n) = (d.lanes, d.state);
    let mut h = h0.to_vec();
    let mut y = vec![0.0; d.len * l];
    for t in 0..d.len {
        for lane in 0..l {
            let mut acc = skip[lane] * x[t * l + lane];
            for s in 0..n {
                let i = lane * n + s;
                h[i] = d.a_bar[(t * l + lane) * n + s] * h[i] + d.bx[(t * l + lane) * n + s];
                acc += d.c[t * n + s] * h[i];
            }
            y[t * l + lane] = acc;
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_agree_with_naive_loop(
        t in 1usize..70,
        l in 1usize..5,
        n in 1usize..5,
        seed in prop::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let d = discretized(t, l, n, seed.clone());
        let h0: Vec<f64> = (0..l * n).map(|i| seed[i % seed.len()] * 0.3).collect();
        let skip: Vec<f64> = (0..l).map(|i| 0.1 * i as f64).collect();
        let x: Vec<f64> = (0..t * l).map(|i| seed[(i * 5) % seed.len()]).collect();
        let state = ScanState { lanes: l, state: n, h: h0.clone() };
        let want = naive(&d, &h0, &skip, &x);
        let (ys, hs) = selective_scan_seq(&d, &state, &skip, &x);
        let (yp, hp) = selective_scan_parallel(&d, &state, &skip, &x);
        let scale = want.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for i in 0..want.len() {
            prop_assert!((ys[i] - want[i]).abs() <= 1e-14 * scale);
            prop_assert!((yp[i] - want[i]).abs() <= 1e-12 * scale);
        }
        for (a, b) in hp.h.iter().zip(&hs.h) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn combine_is_associative(v in prop::collection::vec(-2.0f64..2.0, 6)) {
        let (p, q, r) = ((v[0], v[1]), (v[2], v[3]), (v[4], v[5]));
        let left = combine(combine(p, q), r);
        let right = combine(p, combine(q, r));
        prop_assert!((left.0 - right.0).abs() <= 1e-14);
        prop_assert!((left.1 - right.1).abs() <= 1e-13);
    }

    #[test]
    fn zoh_decays_and_stays_finite(log_a in -6.0f64..3.0, b in -3.0f64..3.0, delta in 1e-12f64..5.0) {
        let a = -log_a.exp();
        let (ab, bb) = discretize_zoh(a, b, delta);
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert!(bb.is_finite());
        // |b̄| never exceeds Δ·|b| for a stable diagonal entry.
        prop_assert!(bb.abs() <= delta * b.abs() * (1.0 + 1e-12));
    }
}

#[test]
fn spec_zoh_case() {
    let (ab, bb) = discretize_zoh(-1.0, 2.0, std::f64::consts::LN_2);
    assert!((ab - 0.5).abs() <= 1e-12);
    assert!((bb - 1.0).abs() <= 1e-12);
}

#[test]
fn zero_input_gives_zero_output() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let p = S6Params::init(3, 4, &mut rng);
    for mode in [ScanMode::Sequential, ScanMode::Parallel] {
        assert!(p.forward(&[0.0; 30], mode).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn parameterized_scan_matches_parallel_on_long_sequence() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let p = S6Params::init(8, 16, &mut rng);
    let x: Vec<f64> = (0..8 * 500).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = p.forward(&x, ScanMode::Sequential).unwrap();
    let b = p.forward(&x, ScanMode::Parallel).unwrap();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 1e-9 * scale);
    }
    assert!(parameterize(&x[..7], &p).is_err());
}

#[test]
fn backward_matches_finite_differences_on_bx() {
    let d = discretized(12, 2, 3, vec![0.3, -0.7, 0.1, 0.9, -0.2]);
    let h0 = ScanState::zeros(2, 3);
    let x = vec![0.5; 24];
    let dy: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let skip = vec![0.2, -0.4];
    let loss = |d: &S6Discretized| -> f64 {
        let (y, _) = selective_scan_seq(d, &h0, &skip, &x);
        y.iter().zip(&dy).map(|(a, b)| a * b).sum()
    };
    let g = selective_scan_backward(&d, &h0, &x, &dy);
    for i in 0..d.bx.len() {
        let (mut p, mut m) = (d.clone(), d.clone());
        p.bx[i] += 1e-5;
        m.bx[i] -= 1e-5;
        let fd = (loss(&p) - loss(&m)) / 2e-5;
        assert!((fd - g.bx[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.bx[i]);
    }
    // The skip gradient is Σ_t dy·x.
    let want: Vec<f64> = (0..2).map(|l| (0..12).map(|t| dy[t * 2 + l] * 0.5).sum()).collect();
    for (a, b) in g.skip.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
}
