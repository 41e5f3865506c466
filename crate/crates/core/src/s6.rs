//! Input-dependent selective scan.
//!
//! A sequence of `T` steps with `L` independent lanes drives a diagonal
//! state of size `N` per lane:
//!
//! ```text
//! Δ_t = softplus(W_Δ x_t + b_Δ)           (per lane)
//! B_t = W_B x_t,  C_t = W_C x_t            (shared across lanes, N each)
//! ā   = exp(Δ a),  b̄ = (exp(Δ a) − 1)/a · B
//! h_t = ā_t ⊙ h_{t−1} + b̄_t x_t
//! y_t = ⟨C_t, h_t⟩ + D x_t
//! ```
//!
//! with `a = −exp(log_a)` so every diagonal entry is strictly negative.
//! The recurrence is evaluated either strictly left to right or with a
//! work-efficient associative tree; both consume the same [`S6Discretized`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};

/// Below this `|Δ·a|` the closed form loses precision and the series is used.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    y + libm::log(-libm::expm1(-y))
}

/// Exact zero-order hold for one diagonal entry: returns `(ā, b̄)`.
#[inline]
pub fn discretize_zoh(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let da = delta * a;
    let a_bar = libm::exp(da);
    let b_bar = if da.abs() < ZOH_SERIES_THRESHOLD {
        delta * b * (1.0 + 0.5 * da)
    } else {
        libm::expm1(da) / a * b
    };
    (a_bar, b_bar)
}

/// Learnable parameters of one selective-scan unit.
#[derive(Debug, Clone, PartialEq)]
pub struct S6Params {
    lanes: usize,
    state: usize,
    /// `L × N`; `A = −exp(log_a)`.
    pub log_a: Vec<f64>,
    /// `L × L`, row per output lane.
    pub w_delta: Vec<f64>,
    pub b_delta: Vec<f64>,
    /// `N × L`.
    pub w_b: Vec<f64>,
    /// `N × L`.
    pub w_c: Vec<f64>,
    /// Direct feedthrough per lane.
    pub skip: Vec<f64>,
}

impl S6Params {
    /// All projections zero, `A = −1`, no skip.
    pub fn zeros(lanes: usize, state: usize) -> Self {
        Self {
            lanes,
            state,
            log_a: vec![0.0; lanes * state],
            w_delta: vec![0.0; lanes * lanes],
            b_delta: vec![0.0; lanes],
            w_b: vec![0.0; state * lanes],
            w_c: vec![0.0; state * lanes],
            skip: vec![0.0; lanes],
        }
    }

    /// Standard initialization: `A_n = −(n+1)`, step sizes log-uniform in
    /// `[1e-3, 1e-1]`, projections uniform in `±1/√L`, unit skip.
    pub fn init<R: Rng + ?Sized>(lanes: usize, state: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(lanes.max(1) as f64);
        let mut uniform = |scale: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
        };
        let w_delta = uniform(bound * 0.1, lanes * lanes);
        let w_b = uniform(bound, state * lanes);
        let w_c = uniform(bound, state * lanes);
        let log_a = (0..lanes * state)
            .map(|i| libm::log((i % state + 1) as f64))
            .collect();
        let (lo, hi) = (libm::log(1e-3), libm::log(1e-1));
        let b_delta = (0..lanes)
            .map(|_| softplus_inv(libm::exp(rng.random_range(lo..hi))))
            .collect();
        Self {
            lanes,
            state,
            log_a,
            w_delta,
            b_delta,
            w_b,
            w_c,
            skip: vec![1.0; lanes],
        }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn state_dim(&self) -> usize {
        self.state
    }

    #[inline]
    pub fn a(&self, lane: usize, n: usize) -> f64 {
        -libm::exp(self.log_a[lane * self.state + n])
    }

    pub fn check(&self) -> Result<()> {
        let (l, n) = (self.lanes, self.state);
        let ok = self.log_a.len() == l * n
            && self.w_delta.len() == l * l
            && self.b_delta.len() == l
            && self.w_b.len() == n * l
            && self.w_c.len() == n * l
            && self.skip.len() == l;
        if !ok || n == 0 {
            return Err(shape_err!("S6 parameter buffers do not match lanes={l}, state={n}"));
        }
        Ok(())
    }

    /// Discretize and scan `x` (`T × L`) from a zero state.
    pub fn forward(&self, x: &[f64], mode: ScanMode) -> Result<Vec<f64>> {
        let mut ops = 0;
        self.forward_counted(x, mode, &mut ops)
    }

    /// [`S6Params::forward`], adding the executed operations to `ops`.
    pub fn forward_counted(&self, x: &[f64], mode: ScanMode, ops: &mut u64) -> Result<Vec<f64>> {
        let d = parameterize(x, self)?;
        let h0 = ScanState::zeros(self.lanes, self.state);
        let (y, _) = match mode {
            ScanMode::Sequential => selective_scan_seq(&d, &h0, &self.skip, x),
            ScanMode::Parallel => selective_scan_parallel(&d, &h0, &self.skip, x),
        };
        *ops += executed_ops(d.len, d.lanes, d.state);
        Ok(y)
    }
}

/// How the recurrence is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

/// Operations per discretized entry: two exponentials, a division and two products.
pub const ZOH_OPS: u64 = 5;

/// Operations executed by one forward pass over `len` steps. The tree
/// evaluation is charged the same algorithmic cost as the left-to-right one.
fn executed_ops(len: usize, lanes: usize, state: usize) -> u64 {
    let (t, l, n) = (len as u64, lanes as u64, state as u64);
    let delta = t * l * (2 * l + 1) + t * l;
    let proj = 2 * t * n * 2 * l;
    let zoh = t * l * n * ZOH_OPS;
    let recur = t * l * n * 2;
    let readout = t * l * (2 * n + 2);
    delta + proj + zoh + recur + readout
}

/// Per-step discretized coefficients; the shared input of every scan kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct S6Discretized {
    pub len: usize,
    pub lanes: usize,
    pub state: usize,
    /// `T × L × N`.
    pub a_bar: Vec<f64>,
    /// `T × L × N`, with `b̄·x_t` folded in.
    pub bx: Vec<f64>,
    /// `T × N`.
    pub c: Vec<f64>,
}

impl S6Discretized {
    pub fn check(&self) -> Result<()> {
        let m = self.len * self.lanes * self.state;
        if self.a_bar.len() != m || self.bx.len() != m || self.c.len() != self.len * self.state {
            return Err(shape_err!("discretized buffers do not match T={}, L={}, N={}", self.len, self.lanes, self.state));
        }
        Ok(())
    }
}

/// Hidden state, `L × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState {
    pub lanes: usize,
    pub state: usize,
    pub h: Vec<f64>,
}

impl ScanState {
    pub fn zeros(lanes: usize, state: usize) -> Self {
        Self {
            lanes,
            state,
            h: vec![0.0; lanes * state],
        }
    }
}

/// Projects and discretizes `x` (`T × L`, row per step).
pub fn parameterize(x: &[f64], p: &S6Params) -> Result<S6Discretized> {
    p.check()?;
    let (l_dim, n_dim) = (p.lanes, p.state);
    if l_dim == 0 || !x.len().is_multiple_of(l_dim) {
        return Err(shape_err!("input length {} is not a multiple of {l_dim} lanes", x.len()));
    }
    let t_len = x.len() / l_dim;
    let mut a_bar = vec![0.0; t_len * l_dim * n_dim];
    let mut bx = vec![0.0; t_len * l_dim * n_dim];
    let mut c = vec![0.0; t_len * n_dim];
    let mut b_t = vec![0.0; n_dim];
    let a: Vec<f64> = (0..l_dim * n_dim).map(|i| -libm::exp(p.log_a[i])).collect();
    for t in 0..t_len {
        let xt = &x[t * l_dim..(t + 1) * l_dim];
        for n in 0..n_dim {
            let row = n * l_dim..(n + 1) * l_dim;
            b_t[n] = dot(&p.w_b[row.clone()], xt);
            c[t * n_dim + n] = dot(&p.w_c[row], xt);
        }
        for l in 0..l_dim {
            let delta = softplus(dot(&p.w_delta[l * l_dim..(l + 1) * l_dim], xt) + p.b_delta[l]);
            let base = (t * l_dim + l) * n_dim;
            for n in 0..n_dim {
                let (ab, bb) = discretize_zoh(a[l * n_dim + n], b_t[n], delta);
                a_bar[base + n] = ab;
                bx[base + n] = bb * xt[l];
            }
        }
    }
    Ok(S6Discretized {
        len: t_len,
        lanes: l_dim,
        state: n_dim,
        a_bar,
        bx,
        c,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn readout(d: &S6Discretized, t: usize, h: &[f64], skip: &[f64], x: &[f64], y: &mut [f64]) {
    let (l_dim, n_dim) = (d.lanes, d.state);
    let ct = &d.c[t * n_dim..(t + 1) * n_dim];
    for l in 0..l_dim {
        let hl = &h[l * n_dim..(l + 1) * n_dim];
        y[t * l_dim + l] = dot(ct, hl) + skip[l] * x[t * l_dim + l];
    }
}

/// Left-to-right evaluation of the recurrence. Returns `y` (`T × L`) and `h_T`.
pub fn selective_scan_seq(d: &S6Discretized, h0: &ScanState, skip: &[f64], x: &[f64]) -> (Vec<f64>, ScanState) {
    let (l_dim, n_dim) = (d.lanes, d.state);
    let m = l_dim * n_dim;
    let mut h = h0.h.clone();
    let mut y = vec![0.0; d.len * l_dim];
    for t in 0..d.len {
        let a = &d.a_bar[t * m..(t + 1) * m];
        let b = &d.bx[t * m..(t + 1) * m];
        for i in 0..m {
            h[i] = a[i] * h[i] + b[i];
        }
        readout(d, t, &h, skip, x, &mut y);
    }
    (
        y,
        ScanState {
            lanes: l_dim,
            state: n_dim,
            h,
        },
    )
}

/// Composition of two affine steps, `first` applied before `second`:
/// `(a₁, b₁)∘(a₂, b₂) = (a₁a₂, a₂b₁ + b₂)`.
#[inline]
pub fn combine(first: (f64, f64), second: (f64, f64)) -> (f64, f64) {
    (first.0 * second.0, second.0 * first.1 + second.1)
}

/// Exclusive prefix compositions over columns of `a`/`b` (`len × width`,
/// `len` a power of two), computed in place by up-sweep and down-sweep.
fn blelloch_exclusive(a: &mut [f64], b: &mut [f64], len: usize, width: usize) {
    let mut half = 1;
    while half < len {
        let stride = half * 2;
        let mut i = stride - 1;
        while i < len {
            let left = i - half;
            for j in 0..width {
                let (na, nb) = combine((a[left * width + j], b[left * width + j]), (a[i * width + j], b[i * width + j]));
                a[i * width + j] = na;
                b[i * width + j] = nb;
            }
            i += stride;
        }
        half = stride;
    }
    for j in 0..width {
        a[(len - 1) * width + j] = 1.0;
        b[(len - 1) * width + j] = 0.0;
    }
    let mut half = len / 2;
    while half >= 1 {
        let stride = half * 2;
        let mut i = stride - 1;
        while i < len {
            let left = i - half;
            for j in 0..width {
                let (la, lb) = (a[left * width + j], b[left * width + j]);
                let (pa, pb) = (a[i * width + j], b[i * width + j]);
                a[left * width + j] = pa;
                b[left * width + j] = pb;
                let (na, nb) = combine((pa, pb), (la, lb));
                a[i * width + j] = na;
                b[i * width + j] = nb;
            }
            i += stride;
        }
        half /= 2;
    }
}

/// Tree evaluation of the same recurrence as [`selective_scan_seq`].
pub fn selective_scan_parallel(d: &S6Discretized, h0: &ScanState, skip: &[f64], x: &[f64]) -> (Vec<f64>, ScanState) {
    let (l_dim, n_dim) = (d.lanes, d.state);
    let m = l_dim * n_dim;
    if d.len <= 1 {
        return selective_scan_seq(d, h0, skip, x);
    }
    let padded = d.len.next_power_of_two();
    let mut a = vec![1.0; padded * m];
    let mut b = vec![0.0; padded * m];
    a[..d.len * m].copy_from_slice(&d.a_bar);
    b[..d.len * m].copy_from_slice(&d.bx);
    // Fold the initial state into the first step.
    for i in 0..m {
        b[i] = d.a_bar[i] * h0.h[i] + d.bx[i];
    }
    let first_b: Vec<f64> = b[..m].to_vec();
    blelloch_exclusive(&mut a, &mut b, padded, m);

    let mut y = vec![0.0; d.len * l_dim];
    let mut h = vec![0.0; m];
    for t in 0..d.len {
        for i in 0..m {
            let step_b = if t == 0 { first_b[i] } else { d.bx[t * m + i] };
            let step = (d.a_bar[t * m + i], step_b);
            h[i] = combine((a[t * m + i], b[t * m + i]), step).1;
        }
        readout(d, t, &h, skip, x, &mut y);
    }
    (
        y,
        ScanState {
            lanes: l_dim,
            state: n_dim,
            h,
        },
    )
}

/// Reverse-mode derivatives of the recurrence and readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGradients {
    /// `T × L × N`.
    pub a_bar: Vec<f64>,
    /// `T × L × N`.
    pub bx: Vec<f64>,
    /// `T × N`.
    pub c: Vec<f64>,
    /// `L`.
    pub skip: Vec<f64>,
    /// `L × N`.
    pub h0: Vec<f64>,
}

/// Adjoint pass given upstream `dy` (`T × L`). States are recomputed.
pub fn selective_scan_backward(d: &S6Discretized, h0: &ScanState, x: &[f64], dy: &[f64]) -> ScanGradients {
    let (t_len, l_dim, n_dim) = (d.len, d.lanes, d.state);
    let m = l_dim * n_dim;
    let mut hs = vec![0.0; t_len * m];
    let mut h = h0.h.clone();
    for t in 0..t_len {
        for i in 0..m {
            h[i] = d.a_bar[t * m + i] * h[i] + d.bx[t * m + i];
        }
        hs[t * m..(t + 1) * m].copy_from_slice(&h);
    }

    let mut g_a = vec![0.0; t_len * m];
    let mut g_bx = vec![0.0; t_len * m];
    let mut g_c = vec![0.0; t_len * n_dim];
    let mut carry = vec![0.0; m];
    for t in (0..t_len).rev() {
        let prev = if t == 0 { &h0.h[..] } else { &hs[(t - 1) * m..t * m] };
        let ht = &hs[t * m..(t + 1) * m];
        for l in 0..l_dim {
            let g_y = dy[t * l_dim + l];
            for n in 0..n_dim {
                let i = l * n_dim + n;
                let g = carry[i] + d.c[t * n_dim + n] * g_y;
                g_bx[t * m + i] = g;
                g_a[t * m + i] = g * prev[i];
                carry[i] = g * d.a_bar[t * m + i];
                g_c[t * n_dim + n] += g_y * ht[i];
            }
        }
    }
    let mut g_skip = vec![0.0; l_dim];
    for t in 0..t_len {
        for l in 0..l_dim {
            g_skip[l] += dy[t * l_dim + l] * x[t * l_dim + l];
        }
    }
    ScanGradients {
        a_bar: g_a,
        bx: g_bx,
        c: g_c,
        skip: g_skip,
        h0: carry,
    }
}
