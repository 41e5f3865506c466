//! Token orderings for the selective-scan sequences.
//!
//! All orderings are permutations of indices into a [`TokenSet`], so the
//! kernels never see discarded tokens.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, shape_err, Result};
use crate::sparsify::TokenSet;
use crate::stca::TokenScoreMap;

/// A bijection on `0..len`; `order[i]` is the token visited at step `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Validates that `order` is a bijection.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(shape_err!("index {i} breaks the permutation of length {}", order.len()));
            }
            seen[i] = true;
        }
        Ok(Self(order))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    /// Rows of width `width` in visit order.
    pub fn apply_rows(&self, rows: &[f64], width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len());
        for &i in &self.0 {
            out.extend_from_slice(&rows[i * width..(i + 1) * width]);
        }
        out
    }

    /// Puts rows produced in visit order back at their token index.
    pub fn unapply_rows(&self, rows: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows.len()];
        for (step, &i) in self.0.iter().enumerate() {
            out[i * width..(i + 1) * width].copy_from_slice(&rows[step * width..(step + 1) * width]);
        }
        out
    }
}

/// `invert(p)[p[i]] = i`.
pub fn invert(p: &Permutation) -> Permutation {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.0.iter().enumerate() {
        inv[v] = i;
    }
    Permutation(inv)
}

/// Row-major raster over kept tokens and its reverse.
pub fn bidi_orders(ts: &TokenSet) -> (Permutation, Permutation) {
    let fwd = Permutation::identity(ts.len());
    let bwd = fwd.reversed();
    (fwd, bwd)
}

/// The four raster paths of the cross pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossOrders {
    pub row_forward: Permutation,
    pub row_backward: Permutation,
    pub col_forward: Permutation,
    pub col_backward: Permutation,
}

impl CrossOrders {
    pub fn iter(&self) -> impl Iterator<Item = &Permutation> {
        [&self.row_forward, &self.row_backward, &self.col_forward, &self.col_backward].into_iter()
    }
}

pub fn cross_orders(ts: &TokenSet) -> CrossOrders {
    let (row_forward, row_backward) = bidi_orders(ts);
    let mut col: Vec<usize> = (0..ts.len()).collect();
    let coords = ts.coords();
    col.sort_by_key(|&i| (coords[i].1, coords[i].0));
    let col_forward = Permutation(col);
    let col_backward = col_forward.reversed();
    CrossOrders {
        row_forward,
        row_backward,
        col_forward,
        col_backward,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IplConfig {
    /// Side of the local window kept contiguous in the scan.
    pub window: usize,
}

impl Default for IplConfig {
    fn default() -> Self {
        Self { window: 2 }
    }
}

/// Window visit order: windows sorted by their max score, descending, ties
/// by ascending window index. Returns window indices (row-major over the
/// window grid) and the window maxima.
pub fn ipl_window_order(scores: &TokenScoreMap, cfg: &IplConfig) -> Result<(Vec<usize>, Vec<f64>)> {
    let k = cfg.window;
    let (rows, cols) = scores.dims();
    if k == 0 || rows % k != 0 || cols % k != 0 {
        return Err(config_err!("IPL window {k} does not divide token grid {rows}x{cols}"));
    }
    let maxima = scores
        .values
        .pool(k, |it| it.copied().fold(f64::NEG_INFINITY, f64::max))?
        .into_vec();
    let mut order: Vec<usize> = (0..maxima.len()).collect();
    // Stable sort keeps ascending index among equal maxima.
    order.sort_by(|&a, &b| maxima[b].total_cmp(&maxima[a]));
    Ok((order, maxima))
}

/// Information-prioritized local scan.
///
/// Windows are visited by descending max score; inside a window tokens go
/// row-major. Discarded tokens are dropped after sorting, so window scores
/// never depend on the keep map.
pub fn ipl_order(ts: &TokenSet, scores: &TokenScoreMap, cfg: &IplConfig) -> Result<Permutation> {
    if scores.dims() != ts.grid_dims() {
        return Err(shape_err!(
            "score map {:?} does not match token grid {:?}",
            scores.dims(),
            ts.grid_dims()
        ));
    }
    let (windows, _) = ipl_window_order(scores, cfg)?;
    let k = cfg.window;
    let cols = ts.grid_dims().1;
    let wcols = cols / k;
    let index = ts.index_grid();
    let mut order = Vec::with_capacity(ts.len());
    for w in windows {
        let (wr, wc) = (w / wcols, w % wcols);
        for dr in 0..k {
            for dc in 0..k {
                let (r, c) = (wr * k + dr, wc * k + dc);
                if let Some(i) = index[r * cols + c] {
                    order.push(i);
                }
            }
        }
    }
    Ok(Permutation(order))
}

/// Named orderings over a token set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanPath {
    BidiForward,
    BidiBackward,
    ColForward,
    ColBackward,
    Ipl,
}

impl ScanPath {
    pub const ALL: [ScanPath; 5] = [
        ScanPath::BidiForward,
        ScanPath::BidiBackward,
        ScanPath::ColForward,
        ScanPath::ColBackward,
        ScanPath::Ipl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanPath::BidiForward => "bidi-fwd",
            ScanPath::BidiBackward => "bidi-bwd",
            ScanPath::ColForward => "cross-col-fwd",
            ScanPath::ColBackward => "cross-col-bwd",
            ScanPath::Ipl => "ipl",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn order(self, ts: &TokenSet, scores: &TokenScoreMap, cfg: &IplConfig) -> Result<Permutation> {
        Ok(match self {
            ScanPath::BidiForward => bidi_orders(ts).0,
            ScanPath::BidiBackward => bidi_orders(ts).1,
            ScanPath::ColForward => cross_orders(ts).col_forward,
            ScanPath::ColBackward => cross_orders(ts).col_backward,
            ScanPath::Ipl => ipl_order(ts, scores, cfg)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::sparsify::{gather_tokens, FeatureMap};
    use crate::stca::SparsificationMap;

    fn token_set(rows: usize, cols: usize, keep: &[bool]) -> TokenSet {
        let x = FeatureMap::zeros(1, rows, cols);
        let d = SparsificationMap {
            keep: Grid::from_vec(rows, cols, keep.to_vec()).unwrap(),
            threshold: 0.0,
            beta: None,
        };
        gather_tokens(&x, &d).unwrap()
    }

    fn coords_of(ts: &TokenSet, p: &Permutation) -> Vec<(usize, usize)> {
        p.as_slice().iter().map(|&i| ts.coords()[i]).collect()
    }

    #[test]
    fn bidi_on_full_grid() {
        let ts = token_set(2, 2, &[true; 4]);
        let (f, b) = bidi_orders(&ts);
        assert_eq!(f.as_slice(), &[0, 1, 2, 3]);
        assert_eq!(b.as_slice(), &[3, 2, 1, 0]);
        let one = token_set(1, 1, &[true]);
        let (f, b) = bidi_orders(&one);
        assert_eq!((f.as_slice(), b.as_slice()), (&[0][..], &[0][..]));
    }

    #[test]
    fn cross_column_major() {
        let ts = token_set(2, 2, &[true; 4]);
        let c = cross_orders(&ts);
        assert_eq!(coords_of(&ts, &c.col_forward), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let row = token_set(1, 5, &[true; 5]);
        let c = cross_orders(&row);
        assert_eq!(c.row_forward, c.col_forward);
    }

    #[test]
    fn ipl_worked_example() {
        #[rustfmt::skip]
        let s = [
            5., 1., 0., 0.,
            2., 3., 0., 1.,
            0., 0., 9., 8.,
            0., 0., 7., 6.,
        ];
        let scores = TokenScoreMap::new(Grid::from_vec(4, 4, s.to_vec()).unwrap(), 1);
        let ts = token_set(4, 4, &[true; 16]);
        let p = ipl_order(&ts, &scores, &IplConfig { window: 2 }).unwrap();
        let expect = vec![
            (2, 2), (2, 3), (3, 2), (3, 3),
            (0, 0), (0, 1), (1, 0), (1, 1),
            (0, 2), (0, 3), (1, 2), (1, 3),
            (2, 0), (2, 1), (3, 0), (3, 1),
        ];
        assert_eq!(coords_of(&ts, &p), expect);

        let mut keep = [true; 16];
        keep[1] = false;
        let ts = token_set(4, 4, &keep);
        let p = ipl_order(&ts, &scores, &IplConfig { window: 2 }).unwrap();
        let filtered: Vec<_> = expect.into_iter().filter(|&c| c != (0, 1)).collect();
        assert_eq!(coords_of(&ts, &p), filtered);
    }

    #[test]
    fn ipl_uniform_scores_fall_back_to_window_index() {
        let scores = TokenScoreMap::new(Grid::filled(4, 4, 1.0), 1);
        let ts = token_set(4, 4, &[true; 16]);
        let p = ipl_order(&ts, &scores, &IplConfig { window: 2 }).unwrap();
        let first: Vec<_> = coords_of(&ts, &p).into_iter().take(6).collect();
        assert_eq!(first, vec![(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (0, 3)]);
        let whole = ipl_order(&ts, &scores, &IplConfig { window: 4 }).unwrap();
        assert_eq!(whole, Permutation::identity(16));
    }

    #[test]
    fn ipl_rejects_bad_geometry() {
        let scores = TokenScoreMap::new(Grid::filled(4, 4, 1.0), 1);
        let ts = token_set(4, 4, &[true; 16]);
        assert!(ipl_order(&ts, &scores, &IplConfig { window: 3 }).is_err());
        let small = TokenScoreMap::new(Grid::filled(2, 2, 1.0), 1);
        assert!(ipl_order(&ts, &small, &IplConfig::default()).is_err());
    }

    #[test]
    fn inversion() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(invert(&p).as_slice(), &[1, 2, 0]);
        assert_eq!(invert(&Permutation::identity(4)), Permutation::identity(4));
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![1]).is_err());
    }

    #[test]
    fn apply_then_unapply() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let rows = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
        let visited = p.apply_rows(&rows, 2);
        assert_eq!(visited, vec![3.0, 3.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(p.unapply_rows(&visited, 2), rows.to_vec());
    }

    #[test]
    fn path_names_roundtrip() {
        for p in ScanPath::ALL {
            assert_eq!(ScanPath::parse(p.name()), Some(p));
        }
    }
}
