//! Spatiotemporal continuity assessment.
//!
//! Activity events cluster on moving edges and fire repeatedly, so summing
//! normalized timestamps per pixel rewards both recency and repetition. The
//! per-token average is then smoothed with a clipped Gaussian neighbourhood,
//! which suppresses spatially isolated noise, and thresholded against the
//! scene mean scaled by `1/β`.

use alloc::vec::Vec;

use crate::error::{config_err, shape_err, Error, Result};
use crate::event::EventStream;
use crate::grid::Grid;

/// Per-pixel accumulated normalized timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelScoreMap(pub Grid<f64>);

/// Per-token score at patch resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScoreMap {
    pub values: Grid<f64>,
    /// Pixels per token side at the resolution this map describes.
    pub patch: usize,
}

impl TokenScoreMap {
    pub fn new(values: Grid<f64>, patch: usize) -> Self {
        Self { values, patch }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn sum(&self) -> f64 {
        self.values.as_slice().iter().sum()
    }

    /// Max-pools scores by `factor`, matching [`downsample_map`] for the keep map.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let values = self
            .values
            .pool(factor, |it| it.copied().fold(f64::NEG_INFINITY, f64::max))?;
        Ok(Self {
            values,
            patch: self.patch * factor,
        })
    }
}

/// Neighbourhood radius and bandwidth of the spatial aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianConfig {
    pub radius: usize,
    pub sigma: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            radius: 1,
            sigma: 1.0,
        }
    }
}

impl GaussianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(config_err!("gaussian sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }

    /// Weights over the `(2r+1)²` window, row-major, unnormalized.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        let mut w = Vec::with_capacity((2 * self.radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dy * dy + dx * dx) as f64;
                w.push(libm::exp(-d2 / denom));
            }
        }
        w
    }
}

/// Binary keep map at token resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsificationMap {
    pub keep: Grid<bool>,
    /// Threshold the map was cut at.
    pub threshold: f64,
    /// Sparsity factor behind the threshold, when known.
    pub beta: Option<f64>,
}

impl SparsificationMap {
    pub fn all(rows: usize, cols: usize, keep: bool) -> Self {
        Self {
            keep: Grid::filled(rows, cols, keep),
            threshold: 0.0,
            beta: None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.keep.dims()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.as_slice().iter().filter(|&&k| k).count()
    }

    /// Fraction of kept tokens; 0 for an empty grid.
    pub fn kept_ratio(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.kept_count() as f64 / self.keep.len() as f64
    }
}

/// Sums window-normalized timestamps per pixel. Polarity is ignored.
pub fn accumulate_temporal_scores(stream: &EventStream) -> Result<PixelScoreMap> {
    let mut map = Grid::filled(stream.height(), stream.width(), 0.0);
    if stream.is_empty() {
        return Ok(PixelScoreMap(map));
    }
    let span = stream.span();
    if span == 0 {
        return Err(Error::Normalization);
    }
    let (start, span) = (stream.window_start() as f64, span as f64);
    for e in stream.events() {
        *map.get_mut(e.y as usize, e.x as usize) += (e.t as f64 - start) / span;
    }
    Ok(PixelScoreMap(map))
}

/// Average-pools a pixel map into `patch`×`patch` tokens.
pub fn pool_to_tokens(map: &PixelScoreMap, patch: usize) -> Result<TokenScoreMap> {
    let area = (patch * patch) as f64;
    let values = map.0.pool(patch, |it| it.sum::<f64>() / area)?;
    Ok(TokenScoreMap { values, patch })
}

/// Gaussian-weighted neighbourhood mean; weights are renormalized over the
/// in-bounds part of the window.
pub fn gaussian_aggregate(map: &TokenScoreMap, cfg: &GaussianConfig) -> Result<TokenScoreMap> {
    cfg.validate()?;
    let kernel = cfg.kernel();
    let r = cfg.radius as isize;
    let side = 2 * cfg.radius + 1;
    let (rows, cols) = map.dims();
    let src = &map.values;
    let values = Grid::from_fn(rows, cols, |row, col| {
        let mut acc = 0.0;
        let mut total = 0.0;
        for dy in -r..=r {
            let y = row as isize + dy;
            if y < 0 || y >= rows as isize {
                continue;
            }
            for dx in -r..=r {
                let x = col as isize + dx;
                if x < 0 || x >= cols as isize {
                    continue;
                }
                let w = kernel[(dy + r) as usize * side + (dx + r) as usize];
                acc += w * src.get(y as usize, x as usize);
                total += w;
            }
        }
        acc / total
    });
    Ok(TokenScoreMap {
        values,
        patch: map.patch,
    })
}

/// `α = sum(S)/(β·M)`, the mean score divided by `β`.
pub fn compute_threshold(map: &TokenScoreMap, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(config_err!("sparsity factor must be positive, got {beta}"));
    }
    let m = map.values.len();
    if m == 0 {
        return Err(shape_err!("score map is empty"));
    }
    Ok(map.sum() / (beta * m as f64))
}

/// Keeps tokens whose score reaches the threshold (ties are kept).
pub fn build_sparsification_map(map: &TokenScoreMap, threshold: f64) -> SparsificationMap {
    SparsificationMap {
        keep: map.values.map(|&s| s >= threshold),
        threshold,
        beta: None,
    }
}

/// Max-pools a keep map: a coarse token survives if any covered token does.
pub fn downsample_map(map: &SparsificationMap, factor: usize) -> Result<SparsificationMap> {
    let keep = map.keep.pool(factor, |it| it.fold(false, |a, &k| a || k))?;
    Ok(SparsificationMap {
        keep,
        threshold: map.threshold,
        beta: map.beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StcaConfig {
    pub patch: usize,
    pub gaussian: GaussianConfig,
    pub beta: f64,
}

impl Default for StcaConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            gaussian: GaussianConfig::default(),
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StcaOutput {
    /// Smoothed token scores.
    pub scores: TokenScoreMap,
    pub map: SparsificationMap,
}

impl StcaOutput {
    pub fn threshold(&self) -> f64 {
        self.map.threshold
    }
}

/// Scores from an already accumulated pixel map.
pub fn assess_pixel_scores(pixels: &PixelScoreMap, cfg: &StcaConfig) -> Result<StcaOutput> {
    let pooled = pool_to_tokens(pixels, cfg.patch)?;
    let scores = gaussian_aggregate(&pooled, &cfg.gaussian)?;
    let alpha = compute_threshold(&scores, cfg.beta)?;
    let mut map = build_sparsification_map(&scores, alpha);
    map.beta = Some(cfg.beta);
    Ok(StcaOutput { scores, map })
}

/// Full assessment: accumulate, pool, smooth, threshold.
pub fn run_stca(stream: &EventStream, cfg: &StcaConfig) -> Result<StcaOutput> {
    cfg.gaussian.validate()?;
    if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
        return Err(config_err!("sparsity factor must be positive, got {}", cfg.beta));
    }
    let pixels = accumulate_temporal_scores(stream)?;
    assess_pixel_scores(&pixels, cfg)
}
