//! Gathering kept tokens into compact sequences and scattering them back.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::stca::SparsificationMap;

/// Channel-major feature tensor `(channels, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(shape_err!(
                "feature map ({channels}, {rows}, {cols}) needs {} values, got {}",
                channels * rows * cols,
                data.len()
            ));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn from_fn(channels: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * rows * cols);
        for c in 0..channels {
            for r in 0..rows {
                for q in 0..cols {
                    data.push(f(c, r, q));
                }
            }
        }
        Self {
            channels,
            rows,
            cols,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize, q: usize) -> f64 {
        self.data[(c * self.rows + r) * self.cols + q]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, r: usize, q: usize) -> &mut f64 {
        &mut self.data[(c * self.rows + r) * self.cols + q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Channel plane `c`, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies the feature vector at `(r, q)` into `out`.
    pub fn read_token(&self, r: usize, q: usize, out: &mut [f64]) {
        let plane = self.plane();
        let base = r * self.cols + q;
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[c * plane + base];
        }
    }

    pub fn write_token(&mut self, r: usize, q: usize, values: &[f64]) {
        let plane = self.plane();
        let base = r * self.cols + q;
        for (c, v) in values.iter().enumerate() {
            self.data[c * plane + base] = *v;
        }
    }

    /// Token-major copy: `rows·cols` rows of `channels` values.
    pub fn to_tokens(&self) -> Vec<f64> {
        let plane = self.plane();
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for i in 0..plane {
                out[i * self.channels + c] = self.data[c * plane + i];
            }
        }
        out
    }

    /// Inverse of [`FeatureMap::to_tokens`].
    pub fn from_tokens(channels: usize, rows: usize, cols: usize, tokens: &[f64]) -> Result<Self> {
        let plane = rows * cols;
        if tokens.len() != channels * plane {
            return Err(shape_err!("token buffer has {} values, expected {}", tokens.len(), channels * plane));
        }
        let mut data = vec![0.0; tokens.len()];
        for i in 0..plane {
            for c in 0..channels {
                data[c * plane + i] = tokens[i * channels + c];
            }
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }
}

/// Kept tokens in row-major order with their grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    channels: usize,
    rows: usize,
    cols: usize,
    /// `len × channels`, token-major.
    values: Vec<f64>,
    coords: Vec<(usize, usize)>,
}

impl TokenSet {
    /// Builds a token set, checking that coords are in-bounds and strictly row-major increasing.
    pub fn new(channels: usize, grid: (usize, usize), values: Vec<f64>, coords: Vec<(usize, usize)>) -> Result<Self> {
        let (rows, cols) = grid;
        if values.len() != coords.len() * channels {
            return Err(shape_err!(
                "{} coords with {channels} channels need {} values, got {}",
                coords.len(),
                coords.len() * channels,
                values.len()
            ));
        }
        let mut last: Option<usize> = None;
        for &(r, q) in &coords {
            if r >= rows || q >= cols {
                return Err(shape_err!("token ({r}, {q}) outside {rows}x{cols} grid"));
            }
            let lin = r * cols + q;
            if last.is_some_and(|l| lin <= l) {
                return Err(shape_err!("token coords are not strictly row-major"));
            }
            last = Some(lin);
        }
        Ok(Self {
            channels,
            rows,
            cols,
            values,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Same coordinates, new per-token values (possibly a different width).
    pub fn with_values(&self, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() * channels {
            return Err(shape_err!(
                "replacement values have {} entries, expected {}",
                values.len(),
                self.len() * channels
            ));
        }
        Ok(Self {
            channels,
            rows: self.rows,
            cols: self.cols,
            values,
            coords: self.coords.clone(),
        })
    }

    /// Grid of token indices, `None` where the token was not kept.
    pub fn index_grid(&self) -> Vec<Option<usize>> {
        let mut idx = vec![None; self.rows * self.cols];
        for (i, &(r, q)) in self.coords.iter().enumerate() {
            idx[r * self.cols + q] = Some(i);
        }
        idx
    }
}

/// Tokens where the map keeps, in row-major order.
pub fn gather_tokens(x: &FeatureMap, map: &SparsificationMap) -> Result<TokenSet> {
    if map.dims() != x.grid_dims() {
        return Err(shape_err!(
            "keep map {:?} does not match feature grid {:?}",
            map.dims(),
            x.grid_dims()
        ));
    }
    let c = x.channels();
    let n = map.kept_count();
    let mut values = vec![0.0; n * c];
    let mut coords = Vec::with_capacity(n);
    for (r, q, &keep) in map.keep.iter_indexed() {
        if keep {
            let i = coords.len();
            x.read_token(r, q, &mut values[i * c..(i + 1) * c]);
            coords.push((r, q));
        }
    }
    Ok(TokenSet {
        channels: c,
        rows: x.rows(),
        cols: x.cols(),
        values,
        coords,
    })
}

/// Writes `tokens` over a copy of `base`; untouched positions pass through.
pub fn scatter_tokens(tokens: &TokenSet, base: &FeatureMap) -> Result<FeatureMap> {
    if tokens.channels() != base.channels() {
        return Err(shape_err!(
            "token set has {} channels, base has {}",
            tokens.channels(),
            base.channels()
        ));
    }
    let mut out = base.clone();
    for (i, &(r, q)) in tokens.coords().iter().enumerate() {
        if r >= base.rows() || q >= base.cols() {
            return Err(shape_err!("token ({r}, {q}) outside {}x{} grid", base.rows(), base.cols()));
        }
        out.write_token(r, q, tokens.token(i));
    }
    Ok(out)
}

/// Fraction of kept tokens.
pub fn kept_ratio(map: &SparsificationMap) -> f64 {
    map.kept_ratio()
}
